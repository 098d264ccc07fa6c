#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "cflow/program/graph.hpp"

namespace cflow {

nlohmann::json graph_to_json(const ProgramGraph& g);
ProgramGraph graph_from_json(const nlohmann::json& j);

/// FNV-1a 64 over the compact JSON text, as 16 hex digits.
std::string fnv1a_hex(const std::string& text);
std::string graph_hash(const ProgramGraph& g);

nlohmann::json to_json(const Eigen::MatrixXd& m);  // row-major nested lists
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j);

}  // namespace cflow

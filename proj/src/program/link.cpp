#include "cflow/program/link.hpp"

namespace cflow {

std::string link_kind_name(const Link& link) {
  return std::visit(
      [](const auto& l) -> std::string {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, ConstantLink>) return "constant";
        else if constexpr (std::is_same_v<L, AffineLink>) return "affine";
        else if constexpr (std::is_same_v<L, DriftLink>) return "drift";
        else return "tanh_difference";
      },
      link);
}

bool is_affine(const Link& link) {
  return std::holds_alternative<ConstantLink>(link) ||
         std::holds_alternative<AffineLink>(link);
}

}  // namespace cflow

#include "cflow/program/serialize.hpp"

#include <cstdio>

namespace cflow {

using nlohmann::json;

json to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j.at(r).size()) != cols) {
      throw std::invalid_argument("matrix_from_json: ragged rows");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j.at(r).at(c).get<double>();
  }
  return m;
}

namespace {

json vec(const Eigen::VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::VectorXd vec_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

const char* drift_name(DriftKind k) {
  switch (k) {
    case DriftKind::Lorenz: return "lorenz";
    case DriftKind::PopulationDynamics: return "population_dynamics";
    case DriftKind::Recurrent: return "recurrent";
  }
  return "?";
}

DriftKind drift_from(const std::string& s) {
  if (s == "lorenz") return DriftKind::Lorenz;
  if (s == "population_dynamics") return DriftKind::PopulationDynamics;
  if (s == "recurrent") return DriftKind::Recurrent;
  throw std::invalid_argument("unknown drift kind '" + s + "'");
}

json link_to_json(const Link& link) {
  json j;
  j["kind"] = link_kind_name(link);
  std::visit(
      [&](const auto& l) {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, ConstantLink>) {
          j["location"] = vec(l.location);
          j["scale"] = vec(l.scale);
        } else if constexpr (std::is_same_v<L, AffineLink>) {
          j["weight"] = to_json(l.weight);
          j["bias"] = vec(l.bias);
          j["scale"] = vec(l.scale);
        } else if constexpr (std::is_same_v<L, DriftLink>) {
          j["drift"] = drift_name(l.kind);
          j["dt"] = l.dt;
          j["scale"] = vec(l.scale);
          if (l.kind == DriftKind::Recurrent) {
            j["w1"] = to_json(l.rnn.w1);
            j["b1"] = vec(l.rnn.b1);
            j["w2"] = to_json(l.rnn.w2);
            j["b2"] = vec(l.rnn.b2);
            j["w3"] = to_json(l.rnn.w3);
          }
        } else {
          j["scale"] = vec(l.scale);
        }
      },
      link);
  return j;
}

Link link_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "constant") {
    return ConstantLink{vec_from(j.at("location")), vec_from(j.at("scale"))};
  }
  if (kind == "affine") {
    return AffineLink{matrix_from_json(j.at("weight")), vec_from(j.at("bias")),
                      vec_from(j.at("scale"))};
  }
  if (kind == "drift") {
    DriftLink d;
    d.kind = drift_from(j.at("drift").get<std::string>());
    d.dt = j.at("dt").get<double>();
    d.scale = vec_from(j.at("scale"));
    if (d.kind == DriftKind::Recurrent) {
      d.rnn.w1 = matrix_from_json(j.at("w1"));
      d.rnn.b1 = vec_from(j.at("b1"));
      d.rnn.w2 = matrix_from_json(j.at("w2"));
      d.rnn.b2 = vec_from(j.at("b2"));
      d.rnn.w3 = matrix_from_json(j.at("w3"));
    }
    return d;
  }
  if (kind == "tanh_difference") return TanhDifferenceLink{vec_from(j.at("scale"))};
  throw std::invalid_argument("unknown link kind '" + kind + "'");
}

}  // namespace

json graph_to_json(const ProgramGraph& g) {
  json nodes = json::array();
  for (const Node& n : g.nodes()) {
    json jn;
    jn["name"] = n.name;
    jn["dim"] = n.dim;
    jn["family"] = n.family == Family::Gaussian ? "gaussian" : "bernoulli_logit";
    jn["parents"] = n.parents;
    jn["observed"] = n.observed;
    jn["link"] = link_to_json(n.link);
    nodes.push_back(std::move(jn));
  }
  return json{{"nodes", std::move(nodes)}};
}

ProgramGraph graph_from_json(const json& j) {
  ProgramGraph g;
  for (const json& jn : j.at("nodes")) {
    Node n;
    n.name = jn.at("name").get<std::string>();
    n.dim = jn.at("dim").get<int>();
    const std::string family = jn.at("family").get<std::string>();
    if (family == "gaussian") n.family = Family::Gaussian;
    else if (family == "bernoulli_logit") n.family = Family::BernoulliLogit;
    else throw std::invalid_argument("unknown family '" + family + "'");
    n.parents = jn.at("parents").get<std::vector<std::string>>();
    n.observed = jn.at("observed").get<bool>();
    n.link = link_from_json(jn.at("link"));
    g.add_node(std::move(n));
  }
  return g;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string graph_hash(const ProgramGraph& g) {
  return fnv1a_hex(graph_to_json(g).dump());
}

}  // namespace cflow

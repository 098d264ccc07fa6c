#include "cflow/diff/param_store.hpp"

#include <stdexcept>

namespace cflow::diff {

ParamStore::Entry& ParamStore::create(const std::string& name, Array initial) {
  if (entries_.count(name) != 0) {
    throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
  }
  Entry e;
  e.grad = Array::Zero(initial.rows(), initial.cols());
  e.value = std::move(initial);
  return entries_.emplace(name, std::move(e)).first->second;
}

bool ParamStore::contains(const std::string& name) const {
  return entries_.count(name) != 0;
}

ParamStore::Entry& ParamStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw std::out_of_range("ParamStore: unknown parameter '" + name + "'");
  }
  return it->second;
}

const ParamStore::Entry& ParamStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw std::out_of_range("ParamStore: unknown parameter '" + name + "'");
  }
  return it->second;
}

void ParamStore::set_value(const std::string& name, const Array& v) {
  Entry& e = at(name);
  if (e.value.rows() != v.rows() || e.value.cols() != v.cols()) {
    throw std::invalid_argument("ParamStore: shape change for '" + name + "'");
  }
  e.value = v;
}

void ParamStore::zero_grad() {
  for (auto& [name, e] : entries_) e.grad.setZero();
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_) n += static_cast<std::size_t>(e.value.size());
  return n;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, e] : entries_) out.push_back(name);
  return out;
}

}  // namespace cflow::diff

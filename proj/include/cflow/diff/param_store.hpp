#pragma once

#include <map>
#include <string>
#include <vector>

#include "cflow/diff/array.hpp"

namespace cflow::diff {

/// Named trainable arrays. Each entry owns a value slot and a gradient slot of
/// the same shape; shapes are fixed once an entry is created.
class ParamStore {
 public:
  struct Entry {
    Array value;
    Array grad;
  };

  Entry& create(const std::string& name, Array initial);

  bool contains(const std::string& name) const;
  Entry& at(const std::string& name);
  const Entry& at(const std::string& name) const;

  const Array& value(const std::string& name) const { return at(name).value; }
  // Overwrites the value; the shape must match the existing entry.
  void set_value(const std::string& name, const Array& v);

  void zero_grad();

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  std::vector<std::string> names() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::map<std::string, Entry> entries_;
};

}  // namespace cflow::diff

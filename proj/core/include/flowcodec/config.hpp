#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace flowcodec {

/// Ordered flat key=value pairs.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Parses "key = value" lines; '#' starts a comment, blank lines are skipped.
/// Throws ConfigError naming the line on malformed input or repeated keys.
KeyValues parse_key_values(const std::string& text, const std::string& source = "<config>");
KeyValues read_key_values(const std::string& path);
/// Parses one "key=value" command-line override.
std::pair<std::string, std::string> parse_override(const std::string& text);

std::string format_key_values(const KeyValues& kv);

bool parse_bool(const std::string& key, const std::string& value);
int parse_int(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);

/// Named accessors for one config struct.
template <class T>
struct ConfigField {
  std::string key;
  std::function<void(T&, const std::string&)> set;
  std::function<std::string(const T&)> get;
};

template <class T>
class ConfigSchema {
 public:
  explicit ConfigSchema(std::vector<ConfigField<T>> fields) : fields_(std::move(fields)) {}

  bool has(const std::string& key) const { return find(key) != nullptr; }

  void set(T& target, const std::string& key, const std::string& value) const {
    const auto* f = find(key);
    if (f == nullptr) throw_unknown(key);
    f->set(target, value);
  }

  /// Applies every pair; unknown keys are rejected with the list of valid keys.
  void apply(T& target, const KeyValues& kv) const {
    for (const auto& [k, v] : kv) set(target, k, v);
  }

  KeyValues dump(const T& source) const {
    KeyValues out;
    for (const auto& f : fields_) out.emplace_back(f.key, f.get(source));
    return out;
  }

  std::vector<std::string> keys() const {
    std::vector<std::string> out;
    for (const auto& f : fields_) out.push_back(f.key);
    return out;
  }

 private:
  const ConfigField<T>* find(const std::string& key) const {
    for (const auto& f : fields_) {
      if (f.key == key) return &f;
    }
    return nullptr;
  }
  [[noreturn]] void throw_unknown(const std::string& key) const;

  std::vector<ConfigField<T>> fields_;
};

[[noreturn]] void throw_unknown_key(const std::string& key, const std::vector<std::string>& valid);

template <class T>
void ConfigSchema<T>::throw_unknown(const std::string& key) const {
  throw_unknown_key(key, keys());
}

std::string format_double(double v);

}  // namespace flowcodec

#ifndef XMANIP_KV_CONFIG_H_
#define XMANIP_KV_CONFIG_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace xmanip {

// Flat key-value text: one `dotted.key = value` per line, `#` starts a
// comment, blank lines ignored. Duplicate keys are an error.
class KvConfig {
 public:
  KvConfig() = default;

  static KvConfig parse(std::string_view text);
  static KvConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  long get_int(const std::string& key, long fallback) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key, bool fallback) const;

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  // Canonical `key = value` rendering in key order.
  std::string to_string() const;

 private:
  std::map<std::string, std::string> values_;
};

// FNV-1a 64-bit digest, used for config fingerprints in run manifests.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace xmanip

#endif  // XMANIP_KV_CONFIG_H_

#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <json.hpp>

#include "taclr/encoder.hpp"
#include "taclr/product.hpp"
#include "taclr/taxonomy.hpp"

namespace taclr::test {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(TACLR_FIXTURE_DIR) / name;
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("taclr_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline Taxonomy phone_taxonomy() {
  Taxonomy t;
  t.add_pair("phone", "brand", {"Apple", "Huawei", "Samsung"});
  t.add_pair("phone", "capacity", {"64GB", "128GB", "256GB", "512GB"});
  t.add_pair("laptop", "brand", {"Lenovo", "Dell", "Apple"});
  return t;
}

inline ProductItem item(std::string id, std::string category, std::string title, std::string description,
                        std::map<std::string, std::set<std::string>> labels = {}) {
  ProductItem it;
  it.item_id = std::move(id);
  it.category = std::move(category);
  it.title = std::move(title);
  it.description = std::move(description);
  it.labels = std::move(labels);
  return it;
}

inline EncoderConfig tiny_encoder(std::uint64_t seed = 1) {
  EncoderConfig c;
  c.hash_buckets = 1u << 10;
  c.embed_dim = 8;
  c.proj_dim = 8;
  c.seed = seed;
  return c;
}

inline std::vector<double> random_unit(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> n;
  std::vector<double> v(d);
  double s = 0;
  for (auto& x : v) {
    x = n(rng);
    s += x * x;
  }
  for (auto& x : v) x /= std::sqrt(s);
  return v;
}

}  // namespace taclr::test

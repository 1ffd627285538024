#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "hivae/rng.hpp"
#include "hivae/tensor.hpp"

namespace hivae {

// Ordered collection of named trainable tensors. Registration order is the
// serialisation order, so checkpoints are byte-stable.
class ParameterStore {
 public:
  // Registers a parameter initialised uniformly in [-bound, bound].
  ad::Tensor add_uniform(const std::string& name, ad::Shape shape, double bound, RngStream& rng);
  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  ad::Tensor add_fan_in(const std::string& name, ad::Shape shape, std::size_t fan_in, RngStream& rng);
  ad::Tensor add_constant(const std::string& name, ad::Shape shape, double value);

  const std::vector<std::pair<std::string, ad::Tensor>>& items() const { return items_; }
  std::vector<ad::Tensor> tensors() const;
  ad::Tensor get(const std::string& name) const;
  std::size_t scalar_count() const;
  void zero_grad();

  // {"tensors": [{"name", "shape", "values"}...]}; values are float64 in
  // shortest round-trip decimal form.
  nlohmann::json to_json() const;
  // Overwrites values in place; names and shapes must match exactly.
  void load_json(const nlohmann::json& manifest);

 private:
  ad::Tensor add(const std::string& name, ad::Tensor tensor);
  std::vector<std::pair<std::string, ad::Tensor>> items_;
};

void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc, int indent = -1);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace hivae

#include "hivae/checkpoint.hpp"

#include <cmath>
#include <fstream>

#include "hivae/error.hpp"

namespace hivae {

ad::Tensor ParameterStore::add(const std::string& name, ad::Tensor tensor) {
  for (const auto& [existing, t] : items_)
    if (existing == name) throw std::logic_error("duplicate parameter name " + name);
  tensor.set_requires_grad(true);
  items_.emplace_back(name, tensor);
  return tensor;
}

ad::Tensor ParameterStore::add_uniform(const std::string& name, ad::Shape shape, double bound,
                                       RngStream& rng) {
  std::vector<double> values(ad::shape_size(shape));
  for (auto& v : values) v = rng.uniform(-bound, bound);
  return add(name, ad::Tensor::from(std::move(shape), std::move(values)));
}

ad::Tensor ParameterStore::add_fan_in(const std::string& name, ad::Shape shape, std::size_t fan_in,
                                      RngStream& rng) {
  return add_uniform(name, std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

ad::Tensor ParameterStore::add_constant(const std::string& name, ad::Shape shape, double value) {
  return add(name, ad::Tensor::full(std::move(shape), value));
}

std::vector<ad::Tensor> ParameterStore::tensors() const {
  std::vector<ad::Tensor> out;
  for (const auto& [name, t] : items_) out.push_back(t);
  return out;
}

ad::Tensor ParameterStore::get(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return t;
  throw std::out_of_range("unknown parameter " + name);
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : items_) n += t.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [name, t] : items_) t.zero_grad();
}

nlohmann::json ParameterStore::to_json() const {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, t] : items_)
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"values", t.data()}});
  return {{"format_version", 1}, {"tensors", std::move(tensors)}};
}

void ParameterStore::load_json(const nlohmann::json& manifest) {
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != items_.size())
    throw DataError("checkpoint has " + std::to_string(tensors.size()) + " tensors, model expects " +
                    std::to_string(items_.size()));
  for (std::size_t i = 0; i < items_.size(); ++i) {
    auto& [name, t] = items_[i];
    const auto& entry = tensors[i];
    if (entry.at("name").get<std::string>() != name)
      throw DataError("checkpoint tensor #" + std::to_string(i) + " is \"" +
                      entry.at("name").get<std::string>() + "\", expected \"" + name + "\"");
    const auto shape = entry.at("shape").get<ad::Shape>();
    if (shape != t.shape())
      throw DataError("checkpoint tensor \"" + name + "\" has shape " + ad::shape_string(shape) +
                      ", expected " + ad::shape_string(t.shape()));
    auto values = entry.at("values").get<std::vector<double>>();
    if (values.size() != t.size()) throw DataError("checkpoint tensor \"" + name + "\" has wrong value count");
    t.mutable_data() = std::move(values);
  }
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc, int indent) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << doc.dump(indent) << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace hivae

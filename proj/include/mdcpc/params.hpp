#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mdcpc/autograd.hpp"

namespace mdcpc {

using Rng = std::mt19937_64;

// Ordered, named collection of trainable leaves. Order of insertion is the
// serialization order.
class ParamSet {
 public:
  ag::Var add(const std::string& name, Tensor value);
  // Registers an existing leaf (shared between modules).
  void add_existing(const std::string& name, const ag::Var& var);

  const ag::Var& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<std::string>& names() const { return names_; }
  const std::vector<ag::Var>& vars() const { return vars_; }
  std::size_t count() const;  // total scalar parameters
  bool empty() const { return vars_.empty(); }

  void zero_grad() const;

  // Copies values from other for every name present in both, requiring equal
  // shapes. Returns how many tensors were copied.
  int copy_from(const ParamSet& other, const std::string& prefix = "");

  // Deep copy of the current values (name -> tensor).
  std::map<std::string, Tensor> snapshot() const;
  void restore(const std::map<std::string, Tensor>& snap);

  void append(const ParamSet& other);

 private:
  std::vector<std::string> names_;
  std::vector<ag::Var> vars_;
  std::map<std::string, std::size_t> index_;
};

// He-style normal initialization scaled by fan_in.
Tensor init_normal(std::vector<int> shape, Real stddev, Rng& rng);
Tensor init_fan_in(std::vector<int> shape, int fan_in, Rng& rng, Real gain = 1.0);

struct AdamOptions {
  Real learning_rate = 1e-4;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real epsilon = 1e-8;
};

class Adam {
 public:
  Adam(const ParamSet& params, AdamOptions options);
  void step();
  const AdamOptions& options() const { return options_; }

 private:
  std::vector<ag::Var> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  AdamOptions options_;
  std::int64_t t_ = 0;
};

// Serializes the generator state to text and back.
std::string rng_state(const Rng& rng);
void set_rng_state(Rng& rng, const std::string& state);

// Mixes a base seed with stream identifiers into an independent seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

}  // namespace mdcpc

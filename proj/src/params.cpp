#include "mdcpc/params.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mdcpc/error.hpp"

namespace mdcpc {

ag::Var ParamSet::add(const std::string& name, Tensor value) {
  auto var = ag::parameter(std::move(value));
  add_existing(name, var);
  return var;
}

void ParamSet::add_existing(const std::string& name, const ag::Var& var) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  index_[name] = vars_.size();
  names_.push_back(name);
  vars_.push_back(var);
}

const ag::Var& ParamSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return vars_[it->second];
}

std::size_t ParamSet::count() const {
  std::size_t n = 0;
  for (const auto& v : vars_) n += v->value.size();
  return n;
}

void ParamSet::zero_grad() const { ag::zero_grad(vars_); }

int ParamSet::copy_from(const ParamSet& other, const std::string& prefix) {
  int copied = 0;
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i].rfind(prefix, 0) != 0 || !other.contains(names_[i])) continue;
    const auto& src = other.get(names_[i]);
    if (src->value.shape() != vars_[i]->value.shape()) {
      throw ConfigError("parameter " + names_[i] + " has shape " + vars_[i]->value.shape_string() +
                        " but source has " + src->value.shape_string());
    }
    vars_[i]->value = src->value;
    ++copied;
  }
  return copied;
}

std::map<std::string, Tensor> ParamSet::snapshot() const {
  std::map<std::string, Tensor> snap;
  for (std::size_t i = 0; i < names_.size(); ++i) snap[names_[i]] = vars_[i]->value;
  return snap;
}

void ParamSet::restore(const std::map<std::string, Tensor>& snap) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    auto it = snap.find(names_[i]);
    if (it == snap.end()) throw ConfigError("snapshot lacks parameter " + names_[i]);
    if (it->second.shape() != vars_[i]->value.shape()) {
      throw ConfigError("snapshot shape mismatch for " + names_[i]);
    }
    vars_[i]->value = it->second;
  }
}

void ParamSet::append(const ParamSet& other) {
  for (std::size_t i = 0; i < other.names_.size(); ++i) add_existing(other.names_[i], other.vars_[i]);
}

Tensor init_normal(std::vector<int> shape, Real stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<Real> dist(0.0, stddev);
  for (auto& v : t.storage()) v = dist(rng);
  return t;
}

Tensor init_fan_in(std::vector<int> shape, int fan_in, Rng& rng, Real gain) {
  return init_normal(std::move(shape), gain / std::sqrt(static_cast<Real>(std::max(fan_in, 1))), rng);
}

Adam::Adam(const ParamSet& params, AdamOptions options)
    : params_(params.vars()), options_(options) {
  if (!(options_.learning_rate > 0)) throw InvalidArgument("learning rate must be positive");
  for (const auto& p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::step() {
  ++t_;
  const Real b1 = options_.beta1, b2 = options_.beta2;
  const Real c1 = 1.0 - std::pow(b1, static_cast<Real>(t_));
  const Real c2 = 1.0 - std::pow(b2, static_cast<Real>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (p->grad.size() != p->value.size()) continue;
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const Real g = p->grad[i];
      m[i] = b1 * m[i] + (1 - b1) * g;
      v[i] = b2 * v[i] + (1 - b2) * g * g;
      p->value[i] -= options_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + options_.epsilon);
    }
  }
}

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void set_rng_state(Rng& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (!is) throw FormatError("malformed RNG state");
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over the combined words
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ a) ^ (b * 0x9e3779b97f4a7c15ULL + 1));
}

}  // namespace mdcpc

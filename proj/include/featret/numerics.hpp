#pragma once

#include "featret/autodiff.hpp"
#include "featret/tensor.hpp"

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace featret {

// Named parameter values / accumulated gradients. Ordered so iteration is deterministic.
using ParamStore = std::map<std::string, Tensor2>;
using GradStore = std::map<std::string, Tensor2>;

// Leaf variables for every parameter of a store, bound to one tape.
class ParamBinding {
public:
    // trainable(name) == false binds that parameter as a constant; an empty predicate
    // makes everything trainable.
    ParamBinding(ad::Tape& tape, const ParamStore& params,
                 const std::function<bool(const std::string&)>& trainable = {});
    static ParamBinding frozen(ad::Tape& tape, const ParamStore& params);

    ad::Var operator[](const std::string& name) const;
    bool contains(const std::string& name) const { return vars_.contains(name); }

    // Gradients of the trainable parameters after tape.backward(); zeros where nothing flowed.
    GradStore gradients() const;

private:
    ad::Tape* tape_;
    std::map<std::string, ad::Var> vars_;
};

std::vector<double> layer_norm(std::span<const double> x, std::span<const double> gamma,
                               std::span<const double> beta, double eps = 1e-5);

// exp(scores) normalized over the masked positions only; zero elsewhere.
std::vector<double> masked_normalize(std::span<const double> scores, std::span<const bool> mask);

struct AdamWConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double clip_norm = 1.0;
};

struct OptimizerState {
    AdamWConfig config;
    std::map<std::string, Tensor2> first_moment;
    std::map<std::string, Tensor2> second_moment;
    std::size_t step = 0;
};

// One decoupled-weight-decay Adam update with bias correction. Gradients are
// clipped to global L2 norm config.clip_norm first. lr_scale multiplies config.lr
// (used by the warmup schedule). Only parameters present in grads are touched.
// Returns the pre-clip global gradient norm.
double adamw_step(ParamStore& params, const GradStore& grads, OptimizerState& state, double lr_scale = 1.0);

// Linear warmup over the first warmup_fraction of total_steps, then constant 1.
double warmup_scale(std::size_t step_index, std::size_t total_steps, double warmup_fraction = 0.05);

// Loss evaluation; fills *grads with analytic gradients when grads != nullptr.
using LossFn = std::function<double(const ParamStore&, GradStore*)>;

struct GradcheckReport {
    std::map<std::string, double> max_rel_error;
    double worst_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    std::size_t checked = 0;

    bool passed(double tol) const { return worst_error < tol; }
};

struct GradcheckOptions {
    double step = 1e-5;
    // Denominator floor: rel = |a - n| / max(|a|, |n|, floor).
    double floor = 1e-5;
    // Check every k-th entry of each parameter (1 = all entries).
    std::size_t stride = 1;
};

GradcheckReport gradcheck(const LossFn& loss, const ParamStore& params, const GradcheckOptions& options = {});
// Same, against externally supplied analytic gradients.
GradcheckReport gradcheck(const LossFn& loss, const ParamStore& params, const GradStore& analytic,
                          const GradcheckOptions& options = {});

} // namespace featret

#include "featret/numerics.hpp"

#include "featret/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace featret {

ParamBinding::ParamBinding(ad::Tape& tape, const ParamStore& params,
                           const std::function<bool(const std::string&)>& trainable)
    : tape_(&tape) {
    for (const auto& [name, value] : params) {
        const bool train = !trainable || trainable(name);
        vars_.emplace(name, train ? tape.variable(value) : tape.constant(value));
    }
}

ParamBinding ParamBinding::frozen(ad::Tape& tape, const ParamStore& params) {
    return ParamBinding(tape, params, [](const std::string&) { return false; });
}

ad::Var ParamBinding::operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
}

GradStore ParamBinding::gradients() const {
    GradStore out;
    for (const auto& [name, var] : vars_)
        if (tape_->requires_grad(var.id)) out.emplace(name, tape_->grad(var.id));
    return out;
}

std::vector<double> layer_norm(std::span<const double> x, std::span<const double> gamma,
                               std::span<const double> beta, double eps) {
    if (gamma.size() != x.size() || beta.size() != x.size()) {
        throw ShapeError("layer_norm: length mismatch (x " + std::to_string(x.size()) + ", gamma " +
                         std::to_string(gamma.size()) + ", beta " + std::to_string(beta.size()) + ")");
    }
    ad::Tape tape;
    auto out = ad::layer_norm_rows(tape.constant(Tensor2::row(x)), tape.constant(Tensor2::row(gamma)),
                                   tape.constant(Tensor2::row(beta)), eps);
    return {out.value().data().begin(), out.value().data().end()};
}

std::vector<double> masked_normalize(std::span<const double> scores, std::span<const bool> mask) {
    if (mask.size() != scores.size()) throw ShapeError("masked_normalize: mask length mismatch");
    if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) {
        throw Error("masked_normalize: empty mask");
    }
    ad::Tape tape;
    ad::Mask m(mask.begin(), mask.end());
    auto out = ad::masked_softmax_rows(tape.constant(Tensor2::row(scores)), m);
    return {out.value().data().begin(), out.value().data().end()};
}

double adamw_step(ParamStore& params, const GradStore& grads, OptimizerState& state, double lr_scale) {
    const AdamWConfig& cfg = state.config;
    if (!(cfg.lr > 0)) throw Error("adamw: learning rate must be positive");

    double sq = 0;
    for (const auto& [name, g] : grads) {
        auto it = params.find(name);
        if (it == params.end()) throw Error("adamw: gradient for unknown parameter '" + name + "'");
        if (!it->second.same_shape(g)) {
            throw ShapeError("adamw: gradient shape " + g.shape_str() + " for parameter '" + name + "' of shape " +
                             it->second.shape_str());
        }
        if (!g.all_finite()) throw Error("adamw: non-finite gradient for parameter '" + name + "'");
        for (double v : g.data()) sq += v * v;
    }
    const double norm = std::sqrt(sq);
    const double clip = (cfg.clip_norm > 0 && norm > cfg.clip_norm) ? cfg.clip_norm / norm : 1.0;

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    const double lr = cfg.lr * lr_scale;

    for (const auto& [name, g] : grads) {
        Tensor2& theta = params.find(name)->second;
        Tensor2& m = state.first_moment.try_emplace(name, theta.rows(), theta.cols()).first->second;
        Tensor2& v = state.second_moment.try_emplace(name, theta.rows(), theta.cols()).first->second;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double gi = g[i] * clip;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            theta[i] *= 1.0 - lr * cfg.weight_decay;
            theta[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
        }
    }
    return norm;
}

double warmup_scale(std::size_t step_index, std::size_t total_steps, double warmup_fraction) {
    const auto warmup = static_cast<std::size_t>(std::ceil(warmup_fraction * static_cast<double>(total_steps)));
    if (warmup <= 1 || step_index + 1 >= warmup) return 1.0;
    return static_cast<double>(step_index + 1) / static_cast<double>(warmup);
}

GradcheckReport gradcheck(const LossFn& loss, const ParamStore& params, const GradcheckOptions& options) {
    GradStore analytic;
    loss(params, &analytic);
    return gradcheck(loss, params, analytic, options);
}

GradcheckReport gradcheck(const LossFn& loss, const ParamStore& params, const GradStore& analytic,
                          const GradcheckOptions& options) {
    GradcheckReport report;
    ParamStore probe = params;
    const std::size_t stride = std::max<std::size_t>(1, options.stride);
    for (auto& [name, value] : probe) {
        auto git = analytic.find(name);
        double worst = 0;
        for (std::size_t i = 0; i < value.size(); i += stride) {
            const double orig = value[i];
            value[i] = orig + options.step;
            const double up = loss(probe, nullptr);
            value[i] = orig - options.step;
            const double down = loss(probe, nullptr);
            value[i] = orig;
            const double numeric = (up - down) / (2.0 * options.step);
            const double a = git == analytic.end() ? 0.0 : git->second[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
            const double rel = std::abs(a - numeric) / denom;
            ++report.checked;
            worst = std::max(worst, rel);
            if (rel > report.worst_error || !std::isfinite(rel)) {
                report.worst_error = std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity();
                report.worst_param = name;
                report.worst_index = i;
            }
        }
        report.max_rel_error[name] = worst;
    }
    return report;
}

} // namespace featret

#pragma once

#include "featret/autodiff.hpp"
#include "featret/corpus.hpp"
#include "featret/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#ifndef FEATRET_SOURCE_DIR
#define FEATRET_SOURCE_DIR "."
#endif

namespace support {

inline std::string source_path(const std::string& rel) { return std::string(FEATRET_SOURCE_DIR) + "/" + rel; }

inline featret::Tensor2 random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
    std::uniform_real_distribution<double> dist(-scale, scale);
    featret::Tensor2 t(rows, cols);
    for (double& v : t.data()) v = dist(rng);
    return t;
}

// Scalar function of several tensor inputs, built on a tape.
using TapeFn = std::function<featret::ad::Var(featret::ad::Tape&, const std::vector<featret::ad::Var>&)>;

// Largest |analytic - numeric| / max(|analytic|, |numeric|, floor) over every input entry,
// numeric being the central difference with step h (five-point stencil when asked).
inline double max_fd_error(const TapeFn& fn, std::vector<featret::Tensor2> inputs, double h = 1e-5,
                           double floor = 1e-6, bool five_point = false) {
    using namespace featret;
    std::vector<Tensor2> analytic;
    {
        ad::Tape tape;
        std::vector<ad::Var> vars;
        for (const auto& x : inputs) vars.push_back(tape.variable(x));
        tape.backward(fn(tape, vars));
        for (const auto& v : vars) analytic.push_back(v.grad());
    }
    auto eval = [&](const std::vector<Tensor2>& xs) {
        ad::Tape tape;
        std::vector<ad::Var> vars;
        for (const auto& x : xs) vars.push_back(tape.constant(x));
        return fn(tape, vars).value()[0];
    };
    double worst = 0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        for (std::size_t e = 0; e < inputs[k].size(); ++e) {
            const double saved = inputs[k][e];
            auto at = [&](double offset) {
                inputs[k][e] = saved + offset;
                const double v = eval(inputs);
                inputs[k][e] = saved;
                return v;
            };
            const double numeric = five_point ? (at(-2 * h) - 8 * at(-h) + 8 * at(h) - at(2 * h)) / (12 * h)
                                              : (at(h) - at(-h)) / (2 * h);
            const double a = analytic[k][e];
            const double denom = std::max({std::abs(a), std::abs(numeric), floor});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    return worst;
}

// Independent evaluation of the three sentence similarities straight from the record
// fields: relation identity is compared through the tag and label strings themselves.
namespace oracle {

inline std::string dep_label(const featret::SentenceRecord& r, std::size_t i, std::size_t j) {
    for (const auto& e : r.dep_edges)
        if (e.dependent == static_cast<long>(i) && e.head == static_cast<long>(j)) return e.rel;
    return "";
}

inline std::size_t degree(const featret::SentenceRecord& r, std::size_t t) {
    std::size_t d = 0;
    for (const auto& e : r.dep_edges) {
        if (e.head < 0) continue;
        if (e.dependent == static_cast<long>(t)) ++d;
        if (e.head == static_cast<long>(t)) ++d;
    }
    return d;
}

inline std::vector<std::size_t> centers(const featret::SentenceRecord& r) {
    std::vector<std::size_t> out;
    for (const auto& p : r.pairs) {
        std::size_t best = p.span.first;
        for (std::size_t t = p.span.first; t <= p.span.last; ++t)
            if (degree(r, t) > degree(r, best)) best = t;
        out.push_back(best);
    }
    return out;
}

inline double hamming(const featret::SentenceRecord& a, std::size_t ca, const featret::SentenceRecord& b,
                      std::size_t cb, double sigma) {
    const std::size_t len = std::min(a.tokens.size(), b.tokens.size());
    double num = 0, den = 0;
    for (std::size_t t = 0; t < len; ++t) {
        const double dt = static_cast<double>(t) - static_cast<double>(ca);
        const double w = std::exp(-dt * dt / (2 * sigma * sigma));
        int m = 0;
        if (dep_label(a, ca, t) != dep_label(b, cb, t)) ++m;
        if (a.pos_tags[ca] != b.pos_tags[cb] || a.pos_tags[t] != b.pos_tags[t]) ++m;
        num += w * m;
        den += w;
    }
    return num / (2 * den);
}

inline double directed_distance(const featret::SentenceRecord& a, const featret::SentenceRecord& b, double sigma) {
    const auto ca = centers(a), cb = centers(b);
    double sum = 0;
    for (std::size_t i : ca)
        for (std::size_t j : cb) sum += hamming(a, i, b, j, sigma);
    return sum / static_cast<double>(ca.size() * cb.size());
}

inline double lig(const featret::SentenceRecord& a, const featret::SentenceRecord& b, double sigma) {
    auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    return 0.5 * (sig(-directed_distance(a, b, sigma)) + sig(-directed_distance(b, a, sigma)));
}

inline double dom(const featret::SentenceRecord& a, const featret::SentenceRecord& b) {
    auto strip = [](std::string s) {
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
        return s;
    };
    return strip(a.domain) == strip(b.domain) ? 1.0 : 0.0;
}

inline double sen(const featret::SentenceRecord& a, const featret::SentenceRecord& b) {
    auto vec = [](const featret::SentenceRecord& r) {
        std::array<double, 3> v{};
        for (const auto& p : r.pairs) {
            if (p.polarity == featret::Polarity::positive) v[0] += 1;
            if (p.polarity == featret::Polarity::neutral) v[1] += 1;
            if (p.polarity == featret::Polarity::negative) v[2] += 1;
        }
        return v;
    };
    const auto va = vec(a), vb = vec(b);
    double dot = 0, na = 0, nb = 0;
    for (int k = 0; k < 3; ++k) {
        dot += va[k] * vb[k];
        na += va[k] * va[k];
        nb += vb[k] * vb[k];
    }
    if (na == 0 || nb == 0) return 0.5;
    return 0.5 * dot / (std::sqrt(na) * std::sqrt(nb)) + 0.5;
}

} // namespace oracle

} // namespace support

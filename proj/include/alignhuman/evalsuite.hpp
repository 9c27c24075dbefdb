// Copyright (c) 2026 The AlignHuman-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Evaluation: set-level metrics, the per-step clean-estimate analysis, the
// step-skip probe, and the sweep harness with its CSV/SVG artifacts.

#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "alignhuman/errors.hpp"
#include "alignhuman/flowmatch.hpp"
#include "alignhuman/rng.hpp"
#include "alignhuman/spectral.hpp"
#include "alignhuman/synthgen.hpp"
#include "alignhuman/tpo.hpp"
#include "alignhuman/velonet.hpp"

namespace alignhuman {

// ---------------------------------------------------------------------------
// Statistics

namespace stats {

/// Linear-interpolation quantile, q ∈ [0, 1].
inline double quantile(std::vector<double> v, double q) {
    if (v.empty()) throw InvalidArgument("quantile of an empty sample");
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double median(std::span<const double> v) { return quantile({v.begin(), v.end()}, 0.5); }
inline double iqr(std::span<const double> v) {
    return quantile({v.begin(), v.end()}, 0.75) - quantile({v.begin(), v.end()}, 0.25);
}

inline double mean(std::span<const double> v) {
    if (v.empty()) throw InvalidArgument("mean of an empty sample");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Sample standard deviation (n − 1); 0 for a single value.
inline double stddev(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

/// 1-based ranks, ascending; tied values share their average rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
        i = j + 1;
    }
    return ranks;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("pearson: need two equal-length samples, n >= 2");
    const double mx = mean(x), my = mean(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
    const auto rx = average_ranks(x), ry = average_ranks(y);
    return pearson(rx, ry);
}

struct SignTest {
    std::size_t wins = 0;    // a > b
    std::size_t losses = 0;  // a < b
    std::size_t ties = 0;
    double p_value = 1.0;    // exact two-sided binomial, ties dropped
};

inline SignTest sign_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw InvalidArgument("sign_test: samples must be paired");
    SignTest s;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] > b[i]) ++s.wins;
        else if (a[i] < b[i]) ++s.losses;
        else ++s.ties;
    }
    const std::size_t n = s.wins + s.losses;
    if (n == 0) return s;
    const std::size_t k = std::min(s.wins, s.losses);
    const double log_half_n = static_cast<double>(n) * std::log(0.5);
    double tail = 0.0;
    for (std::size_t i = 0; i <= k; ++i)
        tail += std::exp(std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) + log_half_n);
    s.p_value = std::min(1.0, 2.0 * tail);
    return s;
}

} // namespace stats

// ---------------------------------------------------------------------------
// Fréchet distance on (motion, fidelity) features

/// (motion_score, fidelity_score) of one sequence.
using Feature2 = std::array<double, 2>;

inline Feature2 features(const Sequence& x) { return {motion_score(x), fidelity_score(x)}; }

struct Frechet {
    double fd = 0.0;           // squared distance
    bool regularized = false;  // a covariance was degenerate and got +1e-8·I
};

namespace detail {

struct Sym2 {
    double a = 0.0, b = 0.0, d = 0.0;  // [[a, b], [b, d]]
    double trace() const { return a + d; }
    double det() const { return a * d - b * b; }
    double min_eigen() const { return 0.5 * trace() - std::sqrt(0.25 * (a - d) * (a - d) + b * b); }
};

struct Mat2 {
    double m00, m01, m10, m11;
};

inline Mat2 mul(const Mat2& x, const Mat2& y) {
    return {x.m00 * y.m00 + x.m01 * y.m10, x.m00 * y.m01 + x.m01 * y.m11,
            x.m10 * y.m00 + x.m11 * y.m10, x.m10 * y.m01 + x.m11 * y.m11};
}

/// √M = (M + s·I) / √(tr M + 2s), s = √det M, for M with non-negative
/// eigenvalues (exact for 2×2).
inline Mat2 sqrt_psd(const Mat2& m) {
    const double s = std::sqrt(std::max(0.0, m.m00 * m.m11 - m.m01 * m.m10));
    const double tau = std::sqrt(std::max(0.0, m.m00 + m.m11 + 2.0 * s));
    if (tau == 0.0) return {0.0, 0.0, 0.0, 0.0};
    return {(m.m00 + s) / tau, m.m01 / tau, m.m10 / tau, (m.m11 + s) / tau};
}

struct Gaussian2 {
    double mx = 0.0, my = 0.0;
    Sym2 cov;
};

inline Gaussian2 fit(std::span<const Feature2> set) {
    Gaussian2 g;
    const auto n = static_cast<double>(set.size());
    for (const auto& f : set) {
        g.mx += f[0];
        g.my += f[1];
    }
    g.mx /= n;
    g.my /= n;
    for (const auto& f : set) {
        g.cov.a += (f[0] - g.mx) * (f[0] - g.mx);
        g.cov.b += (f[0] - g.mx) * (f[1] - g.my);
        g.cov.d += (f[1] - g.my) * (f[1] - g.my);
    }
    g.cov.a /= n - 1.0;
    g.cov.b /= n - 1.0;
    g.cov.d /= n - 1.0;
    return g;
}

} // namespace detail

inline constexpr std::size_t kMinFrechetSamples = 10;
inline constexpr double kCovarianceJitter = 1e-8;

/// Squared Fréchet distance between 2-D Gaussians fitted to two feature sets.
inline Frechet frechet_distance(std::span<const Feature2> set_a, std::span<const Feature2> set_b) {
    if (set_a.size() < kMinFrechetSamples || set_b.size() < kMinFrechetSamples)
        throw InvalidArgument("frechet_distance: each set needs at least " + std::to_string(kMinFrechetSamples) +
                              " samples, got " + std::to_string(set_a.size()) + " and " +
                              std::to_string(set_b.size()));
    auto ga = detail::fit(set_a), gb = detail::fit(set_b);
    Frechet out;
    for (auto* g : {&ga, &gb}) {
        if (g->cov.min_eigen() <= 0.0) {
            g->cov.a += kCovarianceJitter;
            g->cov.d += kCovarianceJitter;
            out.regularized = true;
        }
    }
    const detail::Mat2 a{ga.cov.a, ga.cov.b, ga.cov.b, ga.cov.d};
    const detail::Mat2 b{gb.cov.a, gb.cov.b, gb.cov.b, gb.cov.d};
    const detail::Mat2 ra = detail::sqrt_psd(a);
    const detail::Mat2 inner = detail::sqrt_psd(detail::mul(detail::mul(ra, b), ra));
    const double dm = (ga.mx - gb.mx) * (ga.mx - gb.mx) + (ga.my - gb.my) * (ga.my - gb.my);
    const double tr = ga.cov.trace() + gb.cov.trace() - 2.0 * (inner.m00 + inner.m11);
    out.fd = std::max(0.0, dm + tr);
    return out;
}

inline Frechet frechet_distance(std::span<const Sequence> set_a, std::span<const Sequence> set_b) {
    std::vector<Feature2> fa, fb;
    for (const auto& x : set_a) fa.push_back(features(x));
    for (const auto& x : set_b) fb.push_back(features(x));
    return frechet_distance(std::span<const Feature2>(fa), std::span<const Feature2>(fb));
}

// ---------------------------------------------------------------------------
// Held-out evaluation

/// Conditions, their clean references, and the sampling noise for one seed.
struct EvalSet {
    std::vector<Condition> conds;
    std::vector<Sequence> reference;
    std::uint64_t noise_seed = 0;
};

inline EvalSet make_eval_set(std::size_t n, std::uint64_t seed) {
    if (n == 0) throw InvalidArgument("make_eval_set: need at least one condition");
    EvalSet e;
    Rng rng(derive_seed(seed, SeedPurpose::EvalConds));
    for (std::size_t i = 0; i < n; ++i) {
        e.conds.push_back(Condition::random(rng));
        e.reference.push_back(gen_clean(e.conds.back()));
    }
    e.noise_seed = derive_seed(seed, SeedPurpose::EvalNoise);
    return e;
}

struct SampleSet {
    std::vector<Sequence> samples;
    std::vector<double> motion;
    std::vector<double> fidelity;
    std::size_t nfe = 0;
};

inline SampleSet score_samples(const Tensor& final_states) {
    SampleSet s;
    for (std::size_t r = 0; r < final_states.rows(); ++r) {
        s.samples.push_back(row_sequence(final_states, r));
        s.motion.push_back(motion_score(s.samples.back()));
        s.fidelity.push_back(fidelity_score(s.samples.back()));
    }
    return s;
}

inline SampleSet generate(const VelocityField& field, const EvalSet& eval, const SamplerConfig& cfg) {
    const SampleTrajectory traj = sample(field, eval.conds, cfg, eval.noise_seed);
    SampleSet s = score_samples(traj.final_state());
    s.nfe = traj.nfe;
    return s;
}

/// One row of a sweep table. motion and fidelity are medians over the
/// evaluation set; fd is measured against the clean references.
struct MetricRecord {
    std::string variant;
    std::string param;
    std::uint64_t seed = 0;
    double motion = std::numeric_limits<double>::quiet_NaN();
    double fidelity = std::numeric_limits<double>::quiet_NaN();
    double fd = std::numeric_limits<double>::quiet_NaN();
    std::size_t nfe = 0;
    std::string status = "ok";
    bool fd_regularized = false;
    double loss_start = std::numeric_limits<double>::quiet_NaN();  // mean of the first 10% of TPO steps
    double loss_end = std::numeric_limits<double>::quiet_NaN();    // mean of the last 10%
    std::vector<double> motion_samples;
    std::vector<double> fidelity_samples;

    bool ok() const { return status == "ok"; }
};

inline MetricRecord summarize(const SampleSet& s, const EvalSet& eval, std::string variant, std::string param,
                              std::uint64_t seed) {
    MetricRecord r;
    r.variant = std::move(variant);
    r.param = std::move(param);
    r.seed = seed;
    r.motion = stats::median(s.motion);
    r.fidelity = stats::median(s.fidelity);
    const Frechet f = frechet_distance(s.samples, eval.reference);
    r.fd = f.fd;
    r.fd_regularized = f.regularized;
    r.nfe = s.nfe;
    r.motion_samples = s.motion;
    r.fidelity_samples = s.fidelity;
    return r;
}

/// Mean TPO loss over the first and last 10% of the logged steps.
inline std::pair<double, double> loss_window_means(const std::vector<TpoLogRow>& log) {
    if (log.empty()) throw InvalidArgument("loss_window_means: empty log");
    const std::size_t w = std::max<std::size_t>(1, log.size() / 10);
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < w; ++i) {
        first += log[i].loss;
        last += log[log.size() - 1 - i].loss;
    }
    return {first / static_cast<double>(w), last / static_cast<double>(w)};
}

// ---------------------------------------------------------------------------
// Per-step clean-estimate analysis

struct CurvePoint {
    std::size_t step = 0;  // 1-based executed step
    double t = 0.0;        // evaluation time of the step
    double motion_mean = 0.0;
    double fidelity_mean = 0.0;
    std::size_t n = 0;
};

/// Mean scores of the one-shot clean estimate ẑ1 at every executed step,
/// pooled over conds × noise seeds.
inline std::vector<CurvePoint> timestep_analysis(const VelocityField& field, std::span<const Condition> conds,
                                                 const SamplerConfig& cfg, std::span<const std::uint64_t> seeds) {
    if (conds.empty() || seeds.empty()) throw InvalidArgument("timestep_analysis: need conditions and seeds");
    std::vector<CurvePoint> curve;
    for (std::uint64_t seed : seeds) {
        const SampleTrajectory traj = sample(field, conds, cfg, seed);
        if (curve.empty()) curve.resize(traj.clean_estimates.size());
        for (std::size_t j = 0; j < traj.clean_estimates.size(); ++j) {
            auto& p = curve[j];
            p.step = cfg.skip_k + j + 1;
            p.t = traj.estimate_times[j];
            for (std::size_t r = 0; r < conds.size(); ++r) {
                const Sequence x = row_sequence(traj.clean_estimates[j], r);
                p.motion_mean += motion_score(x);
                p.fidelity_mean += fidelity_score(x);
                ++p.n;
            }
        }
    }
    for (auto& p : curve) {
        p.motion_mean /= static_cast<double>(p.n);
        p.fidelity_mean /= static_cast<double>(p.n);
    }
    return curve;
}

// ---------------------------------------------------------------------------
// Step-skip probe

/// RMS distance between the bins 0-4 components of two sequences.
inline double low_band_divergence(const Sequence& a, const Sequence& b) {
    const Sequence la = spectral::low_band(a), lb = spectral::low_band(b);
    Sequence d{};
    for (std::size_t i = 0; i < kSeqLen; ++i) d[i] = la[i] - lb[i];
    return spectral::rms(d);
}

struct SkipPair {
    double fidelity_full = 0.0;
    double fidelity_skipped = 0.0;
    double motion_full = 0.0;
    double motion_skipped = 0.0;
    double abs_delta_fidelity = 0.0;
    double low_band_divergence = 0.0;     // skipped vs full, same noise
    double floor_divergence = 0.0;        // full vs full from slightly perturbed noise
    double resample_divergence = 0.0;     // full vs full from an independent noise draw
};

struct SkipReport {
    std::size_t skip_k = 0;
    std::vector<SkipPair> pairs;
    double median_fidelity_full = 0.0;
    double median_fidelity_skipped = 0.0;
    double fidelity_iqr_full = 0.0;
    double median_abs_delta_fidelity = 0.0;
    double median_divergence = 0.0;
    double median_floor_divergence = 0.0;
    double median_resample_divergence = 0.0;
};

/// Mixing weight of the fresh draw in the perturbed-noise floor run:
/// z0' = √(1 − ρ²)·z0 + ρ·ε keeps z0' standard normal.
inline constexpr double kNoisePerturbation = 0.1;

/// Samples every (cond, seed) twice from the same noise, once with the first
/// round(skip_fraction·n_steps) steps skipped. Two more full runs, from
/// perturbed and from fresh noise, give reference divergences.
inline SkipReport skip_experiment(const VelocityField& field, std::span<const Condition> conds,
                                  const SamplerConfig& cfg, double skip_fraction,
                                  std::span<const std::uint64_t> seeds) {
    if (!(skip_fraction > 0.0 && skip_fraction < 1.0))
        throw InvalidArgument("skip_experiment: skip_fraction must lie in (0, 1)");
    if (conds.empty() || seeds.empty()) throw InvalidArgument("skip_experiment: need conditions and seeds");
    SkipReport rep;
    rep.skip_k = static_cast<std::size_t>(std::lround(skip_fraction * static_cast<double>(cfg.n_steps)));
    SamplerConfig full = cfg, skipped = cfg;
    full.skip_k = 0;
    skipped.skip_k = rep.skip_k;
    for (std::uint64_t seed : seeds) {
        const Tensor noise = gaussian_noise(conds.size(), seed);
        const Tensor a = sample(field, conds, full, noise).final_state();
        const Tensor b = sample(field, conds, skipped, noise).final_state();
        const Tensor fresh = gaussian_noise(conds.size(), derive_seed(seed, SeedPurpose::EvalNoise));
        Tensor perturbed = noise;
        const double keep = std::sqrt(1.0 - kNoisePerturbation * kNoisePerturbation);
        for (std::size_t i = 0; i < perturbed.size(); ++i)
            perturbed.data[i] = keep * noise.data[i] + kNoisePerturbation * fresh.data[i];
        const Tensor c = sample(field, conds, full, perturbed).final_state();
        const Tensor d = sample(field, conds, full, fresh).final_state();
        for (std::size_t r = 0; r < conds.size(); ++r) {
            const Sequence xa = row_sequence(a, r), xb = row_sequence(b, r);
            SkipPair p;
            p.fidelity_full = fidelity_score(xa);
            p.fidelity_skipped = fidelity_score(xb);
            p.motion_full = motion_score(xa);
            p.motion_skipped = motion_score(xb);
            p.abs_delta_fidelity = std::abs(p.fidelity_full - p.fidelity_skipped);
            p.low_band_divergence = low_band_divergence(xa, xb);
            p.floor_divergence = low_band_divergence(xa, row_sequence(c, r));
            p.resample_divergence = low_band_divergence(xa, row_sequence(d, r));
            rep.pairs.push_back(p);
        }
    }
    auto col = [&](double SkipPair::*f) {
        std::vector<double> v;
        for (const auto& p : rep.pairs) v.push_back(p.*f);
        return v;
    };
    const auto fid_full = col(&SkipPair::fidelity_full);
    rep.median_fidelity_full = stats::median(fid_full);
    rep.median_fidelity_skipped = stats::median(col(&SkipPair::fidelity_skipped));
    rep.fidelity_iqr_full = stats::iqr(fid_full);
    rep.median_abs_delta_fidelity = stats::median(col(&SkipPair::abs_delta_fidelity));
    rep.median_divergence = stats::median(col(&SkipPair::low_band_divergence));
    rep.median_floor_divergence = stats::median(col(&SkipPair::floor_divergence));
    rep.median_resample_divergence = stats::median(col(&SkipPair::resample_divergence));
    return rep;
}

// ---------------------------------------------------------------------------
// Sweeps

enum class SweepKind { Switch, Rank, Nfe, Ablation };

inline std::string_view to_string(SweepKind k) {
    switch (k) {
    case SweepKind::Switch: return "switch";
    case SweepKind::Rank: return "rank";
    case SweepKind::Nfe: return "nfe";
    case SweepKind::Ablation: return "ablation";
    }
    return "?";
}

inline std::optional<SweepKind> parse_sweep_kind(std::string_view s) {
    for (auto k : {SweepKind::Switch, SweepKind::Rank, SweepKind::Nfe, SweepKind::Ablation})
        if (to_string(k) == s) return k;
    return std::nullopt;
}

/// Everything a grid point needs besides the base model and the pairs.
struct ExperimentConfig {
    TpoConfig tpo;
    SamplerConfig sampler;
    double f_switch = 0.2;
    std::size_t n_eval = 200;
};

/// Shortest round-trip decimal form; "nan" for NaN.
inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, res.ptr};
}

namespace detail {

inline double parse_grid_number(const std::string& s, SweepKind kind) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw InvalidArgument(std::string(to_string(kind)) + " grid: '" + s + "' is not a number");
    return v;
}

inline std::size_t parse_grid_count(const std::string& s, SweepKind kind) {
    const double v = parse_grid_number(s, kind);
    if (!(v >= 1.0) || v != std::floor(v))
        throw InvalidArgument(std::string(to_string(kind)) + " grid: '" + s + "' is not a positive integer");
    return static_cast<std::size_t>(v);
}

} // namespace detail

/// Rejects a grid that violates the kind's domain before any training runs.
inline void validate_grid(SweepKind kind, const std::vector<std::string>& grid, const ExperimentConfig& cfg) {
    if (grid.empty()) throw InvalidArgument(std::string(to_string(kind)) + " grid is empty");
    for (const auto& g : grid) {
        switch (kind) {
        case SweepKind::Switch: {
            const double f = detail::parse_grid_number(g, kind);
            if (!(f > 0.0 && f < 1.0)) throw InvalidArgument("switch grid: " + g + " is outside (0, 1)");
            break;
        }
        case SweepKind::Rank: {
            const std::size_t r = detail::parse_grid_count(g, kind);
            if (r > max_lora_rank())
                throw InvalidArgument("rank grid: " + g + " exceeds the largest allowed rank " +
                                      std::to_string(max_lora_rank()));
            break;
        }
        case SweepKind::Nfe: {
            const std::size_t n = detail::parse_grid_count(g, kind);
            if (n > 2 * cfg.sampler.n_steps)
                throw InvalidArgument("nfe grid: " + g + " exceeds 2 x n_steps = " +
                                      std::to_string(2 * cfg.sampler.n_steps));
            if (n < cfg.sampler.nfe_per_step())
                throw InvalidArgument("nfe grid: " + g + " is below one sampler step");
            break;
        }
        case SweepKind::Ablation:
            if (!parse_variant(g)) throw InvalidArgument("ablation grid: unknown variant '" + g + "'");
            break;
        }
    }
}

/// switch: the six switch fractions; rank: 2..32 in powers of two; nfe: full
/// budget down in 10% steps; ablation: every variant.
inline std::vector<std::string> default_grid(SweepKind kind, const ExperimentConfig& cfg) {
    switch (kind) {
    case SweepKind::Switch: return {"0.1", "0.15", "0.2", "0.25", "0.3", "0.4"};
    case SweepKind::Rank: return {"2", "4", "8", "16", "32"};
    case SweepKind::Nfe: {
        const std::size_t full = cfg.sampler.nfe_per_step() * cfg.sampler.n_steps;
        std::vector<std::string> g;
        for (int tenth = 10; tenth >= 1; --tenth) {
            const std::size_t n = full * static_cast<std::size_t>(tenth) / 10;
            if (n >= cfg.sampler.nfe_per_step()) g.push_back(std::to_string(n));
        }
        return g;
    }
    case SweepKind::Ablation: {
        std::vector<std::string> g;
        for (auto v : kAllVariants) g.emplace_back(to_string(v));
        return g;
    }
    }
    return {};
}

namespace detail {

inline MetricRecord evaluate_tpo(const VelocityNet& base, std::span<const PreferencePair> prefs,
                                 const SegmentSchedule& schedule, const TpoConfig& tpo, const ExperimentConfig& cfg,
                                 const EvalSet& eval, std::uint64_t seed, std::string param) {
    const TpoResult r = train_tpo(base, prefs, schedule, tpo, seed);
    MetricRecord rec =
        summarize(generate(r.field(), eval, cfg.sampler), eval, std::string(to_string(tpo.variant)), std::move(param),
                  seed);
    std::tie(rec.loss_start, rec.loss_end) = loss_window_means(r.log);
    return rec;
}

inline MetricRecord failed(std::string variant, std::string param, std::uint64_t seed, const std::exception& e) {
    MetricRecord r;
    r.variant = std::move(variant);
    r.param = std::move(param);
    r.seed = seed;
    r.status = std::string("failed: ") + e.what();
    return r;
}

} // namespace detail

/// Trains and evaluates every grid point for every seed. A grid point that
/// fails to train yields a row with status "failed: ..." and the sweep
/// continues. The nfe sweep trains full TPO once per seed and evaluates both
/// it and the base at each budget.
inline std::vector<MetricRecord> sweep(SweepKind kind, const std::vector<std::string>& grid, const VelocityNet& base,
                                       std::span<const PreferencePair> prefs, const ExperimentConfig& cfg,
                                       std::span<const std::uint64_t> seeds) {
    validate_grid(kind, grid, cfg);
    if (seeds.empty()) throw InvalidArgument("sweep: need at least one seed");
    std::vector<MetricRecord> out;
    for (std::uint64_t seed : seeds) {
        const EvalSet eval = make_eval_set(cfg.n_eval, seed);
        if (kind == SweepKind::Nfe) {
            std::optional<TpoResult> tpo;
            std::string tpo_error;
            try {
                tpo = train_tpo(base, prefs, SegmentSchedule(cfg.f_switch), cfg.tpo, seed);
            } catch (const std::exception& e) {
                tpo_error = e.what();
            }
            for (const auto& g : grid) {
                SamplerConfig sc = cfg.sampler;
                sc.n_steps = detail::parse_grid_count(g, kind) / cfg.sampler.nfe_per_step();
                sc.skip_k = 0;
                out.push_back(summarize(generate(model_field(base), eval, sc), eval, "base", g, seed));
                if (tpo) {
                    out.push_back(summarize(generate(tpo->field(), eval, sc), eval, "tpo", g, seed));
                    std::tie(out.back().loss_start, out.back().loss_end) = loss_window_means(tpo->log);
                } else {
                    out.push_back(detail::failed("tpo", g, seed, NumericalError(tpo_error)));
                }
            }
            continue;
        }
        for (const auto& g : grid) {
            TpoConfig tpo = cfg.tpo;
            double f_switch = cfg.f_switch;
            std::string param = g;
            switch (kind) {
            case SweepKind::Switch: f_switch = detail::parse_grid_number(g, kind); break;
            case SweepKind::Rank: tpo.rank = detail::parse_grid_count(g, kind); break;
            case SweepKind::Ablation:
                tpo.variant = *parse_variant(g);
                param = format_number(cfg.f_switch);
                break;
            case SweepKind::Nfe: break;
            }
            try {
                out.push_back(
                    detail::evaluate_tpo(base, prefs, SegmentSchedule(f_switch), tpo, cfg, eval, seed, param));
            } catch (const std::exception& e) {
                out.push_back(detail::failed(std::string(to_string(tpo.variant)), param, seed, e));
            }
        }
    }
    return out;
}

struct SummaryRow {
    std::string variant;
    std::string param;
    std::size_t n = 0;
    double motion_mean = 0.0, motion_std = 0.0;
    double fidelity_mean = 0.0, fidelity_std = 0.0;
    double fd_mean = 0.0, fd_std = 0.0;
    double motion_median = 0.0, fidelity_median = 0.0, fd_median = 0.0;
};

/// Per (variant, param) aggregates over successful seeds, in first-seen order.
inline std::vector<SummaryRow> summarize_sweep(const std::vector<MetricRecord>& records) {
    std::vector<SummaryRow> rows;
    std::map<std::pair<std::string, std::string>, std::vector<const MetricRecord*>> groups;
    for (const auto& r : records) {
        const auto key = std::make_pair(r.variant, r.param);
        if (!groups.contains(key)) rows.push_back({r.variant, r.param});
        if (r.ok()) groups[key].push_back(&r);
    }
    for (auto& row : rows) {
        const auto& g = groups[{row.variant, row.param}];
        row.n = g.size();
        if (g.empty()) {
            row.motion_mean = row.fidelity_mean = row.fd_mean = std::numeric_limits<double>::quiet_NaN();
            row.motion_median = row.fidelity_median = row.fd_median = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        std::vector<double> m, f, d;
        for (const auto* r : g) {
            m.push_back(r->motion);
            f.push_back(r->fidelity);
            d.push_back(r->fd);
        }
        row.motion_mean = stats::mean(m);
        row.motion_std = stats::stddev(m);
        row.fidelity_mean = stats::mean(f);
        row.fidelity_std = stats::stddev(f);
        row.fd_mean = stats::mean(d);
        row.fd_std = stats::stddev(d);
        row.motion_median = stats::median(m);
        row.fidelity_median = stats::median(f);
        row.fd_median = stats::median(d);
    }
    return rows;
}

/// Mean of the per-metric ranks (1 = best) of each summary row, from the
/// across-seed medians: higher motion, higher fidelity, lower fd.
inline std::vector<double> combined_ranks(const std::vector<SummaryRow>& rows) {
    std::vector<double> neg_m, neg_f, d;
    for (const auto& r : rows) {
        neg_m.push_back(-r.motion_median);
        neg_f.push_back(-r.fidelity_median);
        d.push_back(r.fd_median);
    }
    const auto rm = stats::average_ranks(neg_m), rf = stats::average_ranks(neg_f), rd = stats::average_ranks(d);
    std::vector<double> out;
    for (std::size_t i = 0; i < rows.size(); ++i) out.push_back((rm[i] + rf[i] + rd[i]) / 3.0);
    return out;
}

// ---------------------------------------------------------------------------
// Artifacts

namespace detail {

inline std::ofstream open_output(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DependencyError("cannot open " + path.string() + " for writing");
    return out;
}

/// Keeps commas and newlines out of free-text CSV fields.
inline std::string csv_field(std::string s) {
    std::replace(s.begin(), s.end(), ',', ';');
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

} // namespace detail

inline void write_curve_csv(const std::filesystem::path& path, const std::vector<CurvePoint>& curve) {
    auto out = detail::open_output(path);
    out << "step,t,motion_mean,fidelity_mean,n\n";
    for (const auto& p : curve)
        out << p.step << ',' << format_number(p.t) << ',' << format_number(p.motion_mean) << ','
            << format_number(p.fidelity_mean) << ',' << p.n << '\n';
}

inline void write_sweep_csv(const std::filesystem::path& path, const std::vector<MetricRecord>& records) {
    auto out = detail::open_output(path);
    out << "variant,param,seed,motion,fidelity,fd,nfe,status\n";
    for (const auto& r : records)
        out << r.variant << ',' << r.param << ',' << r.seed << ',' << format_number(r.motion) << ','
            << format_number(r.fidelity) << ',' << format_number(r.fd) << ',' << r.nfe << ','
            << detail::csv_field(r.status) << '\n';
}

inline void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows) {
    auto out = detail::open_output(path);
    out << "variant,param,n,motion_mean,motion_std,fidelity_mean,fidelity_std,fd_mean,fd_std\n";
    for (const auto& r : rows)
        out << r.variant << ',' << r.param << ',' << r.n << ',' << format_number(r.motion_mean) << ','
            << format_number(r.motion_std) << ',' << format_number(r.fidelity_mean) << ','
            << format_number(r.fidelity_std) << ',' << format_number(r.fd_mean) << ',' << format_number(r.fd_std)
            << '\n';
}

inline void write_tpo_log_csv(const std::filesystem::path& path, const std::vector<TpoLogRow>& log) {
    auto out = detail::open_output(path);
    out << "step,dimension,t,loss\n";
    for (const auto& r : log)
        out << r.step << ',' << to_string(r.dim) << ',' << format_number(r.t_mean) << ',' << format_number(r.loss)
            << '\n';
}

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

/// Minimal SVG line chart: axes with min/max tick labels, one polyline per
/// series, and a legend.
inline void write_line_chart(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                             const std::string& y_label, const std::vector<Series>& series) {
    constexpr double W = 640, H = 400, L = 70, R = 150, T = 40, B = 50;
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series) {
        if (s.x.size() != s.y.size()) throw InvalidArgument("write_line_chart: series '" + s.name + "' is ragged");
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    }
    if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x0 == x1) x1 = x0 + 1;
    if (y0 == y1) y0 -= 0.5, y1 += 0.5;
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
    static constexpr const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                             "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

    auto out = detail::open_output(path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n"
        << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
        << "\" stroke=\"black\"/>\n"
        << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << L << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << format_number(x0)
        << "</text>\n"
        << "<text x=\"" << W - R << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << format_number(x1)
        << "</text>\n"
        << "<text x=\"" << L - 6 << "\" y=\"" << H - B << "\" text-anchor=\"end\">" << format_number(y0)
        << "</text>\n"
        << "<text x=\"" << L - 6 << "\" y=\"" << T + 4 << "\" text-anchor=\"end\">" << format_number(y1)
        << "</text>\n"
        << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << x_label
        << "</text>\n"
        << "<text transform=\"translate(16," << (T + H - B) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
        << y_label << "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const char* c = colors[k % std::size(colors)];
        out << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < series[k].x.size(); ++i)
            if (std::isfinite(series[k].x[i]) && std::isfinite(series[k].y[i]))
                out << format_number(px(series[k].x[i])) << ',' << format_number(py(series[k].y[i])) << ' ';
        out << "\"/>\n";
        const double ly = T + 10 + 18.0 * static_cast<double>(k);
        out << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 30 << "\" y2=\"" << ly
            << "\" stroke=\"" << c << "\" stroke-width=\"2\"/>\n"
            << "<text x=\"" << W - R + 36 << "\" y=\"" << ly + 4 << "\">" << series[k].name << "</text>\n";
    }
    out << "</svg>\n";
}

} // namespace alignhuman

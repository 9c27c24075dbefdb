// Copyright (c) 2026 The AlignHuman-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Length-64 DFT band reconstruction and the two band-energy quality scores.
//
// Bins 0-4 carry the low-frequency "motion" component, bin 16 the fixed
// texture, and bins 5-15 / 17-31 are the residual band whose energy counts
// against fidelity. Bin 32 (Nyquist) belongs to neither score.

#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>

namespace alignhuman {

inline constexpr std::size_t kSeqLen = 64;
inline constexpr std::size_t kNumBins = kSeqLen / 2 + 1;

using Sequence = std::array<double, kSeqLen>;
using BinMask = std::array<bool, kNumBins>;

namespace spectral {

namespace detail {

struct TwiddleTable {
    std::array<double, kSeqLen> cos{};
    std::array<double, kSeqLen> sin{};
    TwiddleTable() {
        for (std::size_t i = 0; i < kSeqLen; ++i) {
            const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / kSeqLen;
            cos[i] = std::cos(a);
            sin[i] = std::sin(a);
        }
    }
};

inline const TwiddleTable& twiddles() {
    static const TwiddleTable table;
    return table;
}

} // namespace detail

/// X_k = Σ x[i]·exp(−2πi·k·i/L) for k = 0..L/2.
inline std::array<std::complex<double>, kNumBins> dft(std::span<const double, kSeqLen> x) {
    const auto& tw = detail::twiddles();
    std::array<std::complex<double>, kNumBins> out{};
    for (std::size_t k = 0; k < kNumBins; ++k) {
        double re = 0.0, im = 0.0;
        for (std::size_t i = 0; i < kSeqLen; ++i) {
            const std::size_t idx = (k * i) % kSeqLen;
            re += x[i] * tw.cos[idx];
            im -= x[i] * tw.sin[idx];
        }
        out[k] = {re, im};
    }
    return out;
}

/// Single-sided amplitudes: (2/L)·|X_k| for 1 ≤ k ≤ 31, |X_k|/L at k = 0 and 32.
inline std::array<double, kNumBins> amplitudes(std::span<const double, kSeqLen> x) {
    const auto spec = dft(x);
    std::array<double, kNumBins> a{};
    for (std::size_t k = 0; k < kNumBins; ++k) {
        const double scale = (k == 0 || k == kNumBins - 1) ? 1.0 / kSeqLen : 2.0 / kSeqLen;
        a[k] = scale * std::abs(spec[k]);
    }
    return a;
}

/// Real signal reconstructed from the selected bins only.
inline Sequence band_component(std::span<const double, kSeqLen> x, const BinMask& keep) {
    const auto spec = dft(x);
    const auto& tw = detail::twiddles();
    Sequence out{};
    for (std::size_t k = 0; k < kNumBins; ++k) {
        if (!keep[k]) continue;
        const double scale = (k == 0 || k == kNumBins - 1) ? 1.0 / kSeqLen : 2.0 / kSeqLen;
        const double re = spec[k].real() * scale, im = spec[k].imag() * scale;
        for (std::size_t i = 0; i < kSeqLen; ++i) {
            const std::size_t idx = (k * i) % kSeqLen;
            out[i] += re * tw.cos[idx] - im * tw.sin[idx];
        }
    }
    return out;
}

inline BinMask bins_between(std::size_t lo, std::size_t hi) {
    BinMask m{};
    for (std::size_t k = lo; k <= hi && k < kNumBins; ++k) m[k] = true;
    return m;
}

inline const BinMask& motion_band() {
    static const BinMask m = bins_between(0, 4);
    return m;
}

inline constexpr std::size_t kTextureBin = 16;

inline const BinMask& residual_band() {
    static const BinMask m = [] {
        BinMask r = bins_between(5, 31);
        r[kTextureBin] = false;
        return r;
    }();
    return m;
}

inline double rms(std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return std::sqrt(s / static_cast<double>(x.size()));
}

inline Sequence low_band(std::span<const double, kSeqLen> x) { return band_component(x, motion_band()); }

} // namespace spectral

/// RMS of the circular first difference of the bins 0-4 component.
inline double motion_score(std::span<const double, kSeqLen> x) {
    const Sequence low = spectral::low_band(x);
    Sequence diff{};
    for (std::size_t i = 0; i < kSeqLen; ++i) diff[i] = low[(i + 1) % kSeqLen] - low[i];
    return spectral::rms(diff);
}

/// Negative RMS of the residual-band component (0 is best).
inline double fidelity_score(std::span<const double, kSeqLen> x) {
    const Sequence residual = spectral::band_component(x, spectral::residual_band());
    return -spectral::rms(residual);
}

} // namespace alignhuman

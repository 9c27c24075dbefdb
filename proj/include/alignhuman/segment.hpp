// Copyright (c) 2026 The AlignHuman-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "alignhuman/errors.hpp"
#include "alignhuman/synthgen.hpp"

namespace alignhuman {

/// Splits normalized time at f_switch: [0, f_switch) is the high-noise
/// motion interval, [f_switch, 1) the fidelity interval.
class SegmentSchedule {
public:
    SegmentSchedule() = default;
    explicit SegmentSchedule(double f_switch) : f_switch_(f_switch) {
        if (!(f_switch > 0.0 && f_switch < 1.0))
            throw InvalidArgument("switch fraction must lie in (0, 1), got " + std::to_string(f_switch));
    }

    double f_switch() const { return f_switch_; }

    double lower(Dimension d) const { return d == Dimension::Motion ? 0.0 : f_switch_; }
    double upper(Dimension d) const { return d == Dimension::Motion ? f_switch_ : 1.0; }

    bool operator==(const SegmentSchedule&) const = default;

private:
    double f_switch_ = 0.2;
};

/// The boundary t = f_switch belongs to the fidelity interval.
inline Dimension active_lora(const SegmentSchedule& s, double t) {
    if (!(t >= 0.0 && t < 1.0)) throw InvalidArgument("active_lora: t must lie in [0, 1), got " + std::to_string(t));
    return t < s.f_switch() ? Dimension::Motion : Dimension::Fidelity;
}

} // namespace alignhuman

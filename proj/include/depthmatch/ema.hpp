#pragma once

// Exponential-moving-average teacher maintenance. The teacher is a full
// model replica with gradient tracking disabled; its parameters follow the
// student as theta_t <- m * theta_t + (1 - m) * theta_s once per optimizer
// step.

#include <cstdint>

#include "depthmatch/model.hpp"

namespace dm {

template <typename S>
void copy_params(ParamStore<S>& dst, const ParamStore<S>& src) {
    if (dst.size() != src.size()) fail("copy_params: parameter count mismatch");
    for (std::size_t i = 0; i < src.size(); ++i) {
        const auto& [sname, st] = src.items()[i];
        auto& [dname, dt] = dst.items()[i];
        if (dname != sname) fail("copy_params: parameter name mismatch at '" + dname + "'");
        if (dt.shape() != st.shape()) fail("copy_params: shape mismatch at '" + dname + "'");
        auto dv = dt.values_mut();
        const auto sv = st.values();
        for (std::size_t j = 0; j < dv.size(); ++j) dv[j] = sv[j];
    }
}

template <typename S>
struct TeacherT {
    SegModelT<S> model;
    double momentum;
    std::int64_t step_count = 0;

    TeacherT(const SegModelT<S>& student, double m)
        : model(student.config(), 0, /*requires_grad=*/false), momentum(m) {
        copy_params(model.params(), student.params());
    }
};

template <typename S>
void ema_update(TeacherT<S>& teacher, const SegModelT<S>& student) {
    auto& tp = teacher.model.params();
    const auto& sp = student.params();
    if (tp.size() != sp.size()) fail("ema_update: parameter count mismatch");
    const S m = S(teacher.momentum);
    const S om = S(1.0 - teacher.momentum);
    for (std::size_t i = 0; i < sp.size(); ++i) {
        const auto& [sname, st] = sp.items()[i];
        auto& [tname, tt] = tp.items()[i];
        if (tname != sname) fail("ema_update: parameter name mismatch at '" + tname + "'");
        if (tt.shape() != st.shape()) fail("ema_update: shape mismatch at '" + tname + "'");
        auto tv = tt.values_mut();
        const auto sv = st.values();
        for (std::size_t j = 0; j < tv.size(); ++j) tv[j] = m * tv[j] + om * sv[j];
    }
    teacher.step_count++;
}

using Teacher = TeacherT<float>;

}  // namespace dm

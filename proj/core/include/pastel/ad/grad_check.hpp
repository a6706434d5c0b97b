#pragma once

#include "pastel/ad/tensor.hpp"

#include <functional>
#include <span>

namespace pastel::ad {

/// Compares tape gradients with central differences of step `eps`. Returns the
/// largest elementwise |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
/// The function must return a 1x1 tensor; anything else is a shape error.
double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Matrix& x, double eps);

/// Same check over every entry of every parameter. Parameters are restored
/// and their gradients left zeroed.
double grad_check(const std::function<Tensor(Tape&)>& f, std::span<Parameter* const> params, double eps);

} // namespace pastel::ad

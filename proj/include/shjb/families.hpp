#pragma once

#include <map>
#include <string>
#include <vector>

#include "shjb/model.hpp"

namespace shjb {

using FamilyParams = std::map<std::string, double>;

// Built-in coefficient families, addressable by name:
//   zero           b = sigma = g = 0, f = running, h = terminal
//   linear         b = a x + beta u, sigma = diag(s0 + s1 x), g = j1 x + j0 e,
//                  f = -r y + qx |x|^2 + qu |u|^2 + kk k, h = hq |x|^2 + hl sum(x) + h0
//   affine-noise   1-d state; b = a x + beta W_d + u, sigma = s e_d, g = j0 e,
//                  f = -r y + gamma N, h = x + eta W_d (W_d last Brownian, N jump count)
//   bounded-smooth 1-d; b = kb u - kt tanh(x), sigma = s, g = e, f = cu u - r y + kk k,
//                  h = -amp exp(-x^2 / (2 w^2))
//   smooth2d       2-d state and noise, smooth nonlinear coefficients for flow tests
// Dimensions come from params "n", "d", "m" where the family allows it.
CoefficientSet make_family(const std::string& name, const FamilyParams& params,
                           const MarkMeasure& measure);

std::vector<std::string> family_names();

}  // namespace shjb

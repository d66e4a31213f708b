#ifndef POSTSEL_POSTSEL_HPP
#define POSTSEL_POSTSEL_HPP

#include "postsel/common.hpp"
#include "postsel/kernels.hpp"
#include "postsel/selection.hpp"
#include "postsel/polyhedral.hpp"
#include "postsel/globalnull.hpp"
#include "postsel/hybrid.hpp"
#include "postsel/mle.hpp"
#include "postsel/multiplicity.hpp"
#include "postsel/analyze.hpp"
#include "postsel/simulate.hpp"
#include "postsel/csv.hpp"

#endif  // POSTSEL_POSTSEL_HPP

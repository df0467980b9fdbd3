#pragma once

#include "nlobs/errors.hpp"
#include "nlobs/symmatrix.hpp"
#include "nlobs/polynomial.hpp"
#include "nlobs/operators.hpp"
#include "nlobs/membership.hpp"
#include "nlobs/grid.hpp"
#include "nlobs/solver.hpp"
#include "nlobs/global.hpp"
#include "nlobs/asymptotic.hpp"
#include "nlobs/verify.hpp"
#include "nlobs/io.hpp"

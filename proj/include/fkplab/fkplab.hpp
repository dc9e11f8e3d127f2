#pragma once

#include "fkplab/types.hpp"
#include "fkplab/quadrature.hpp"
#include "fkplab/parallel.hpp"
#include "fkplab/weight.hpp"
#include "fkplab/kernels.hpp"
#include "fkplab/heat.hpp"
#include "fkplab/carleson.hpp"
#include "fkplab/fkp_identity.hpp"
#include "fkplab/ainfty.hpp"
#include "fkplab/dkp.hpp"
#include "fkplab/io.hpp"

#pragma once

#include "splat/errors.hpp"
#include "splat/geometry.hpp"
#include "splat/volume.hpp"
#include "splat/gridops.hpp"
#include "splat/sparse_operator.hpp"
#include "splat/nifti.hpp"
#include "splat/space_descriptor.hpp"
#include "splat/pipeline.hpp"
#include "splat/adjoint_check.hpp"

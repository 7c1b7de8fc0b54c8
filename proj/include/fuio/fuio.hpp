#pragma once

#include "fuio/errors.hpp"
#include "fuio/json_io.hpp"
#include "fuio/ltv_gpebo.hpp"
#include "fuio/sim_engine.hpp"
#include "fuio/system_model.hpp"
#include "fuio/time_expr.hpp"
#include "fuio/uio_synth.hpp"

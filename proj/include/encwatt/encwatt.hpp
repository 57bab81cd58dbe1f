#pragma once

#include "encwatt/dataset.hpp"
#include "encwatt/encoder_runner.hpp"
#include "encwatt/energy_core.hpp"
#include "encwatt/energy_models.hpp"
#include "encwatt/error.hpp"
#include "encwatt/meter_io.hpp"
#include "encwatt/model_fit.hpp"
#include "encwatt/preset.hpp"
#include "encwatt/report_json.hpp"
#include "encwatt/student_t.hpp"
#include "encwatt/synth.hpp"
#include "encwatt/version.hpp"

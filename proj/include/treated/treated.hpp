#pragma once

#include "treated/attacks.hpp"
#include "treated/checkpoint.hpp"
#include "treated/ensemble.hpp"
#include "treated/errors.hpp"
#include "treated/harness.hpp"
#include "treated/models.hpp"
#include "treated/numerics.hpp"
#include "treated/synth.hpp"
#include "treated/textcore.hpp"
#include "treated/theory.hpp"

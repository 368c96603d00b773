#pragma once

#include "checks.hpp"
#include "error.hpp"
#include "fgcb.hpp"
#include "models.hpp"
#include "numeric.hpp"
#include "operators.hpp"
#include "protocol.hpp"
#include "thermal.hpp"
#include "type_classes.hpp"

#pragma once

#include "liseco/controller.hpp"
#include "liseco/data.hpp"
#include "liseco/eval.hpp"
#include "liseco/io.hpp"
#include "liseco/model.hpp"
#include "liseco/nonlinearity.hpp"
#include "liseco/oracle.hpp"
#include "liseco/probe.hpp"

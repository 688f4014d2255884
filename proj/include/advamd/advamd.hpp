#pragma once

#include "advamd/amendment.hpp"
#include "advamd/attacks.hpp"
#include "advamd/autodiff.hpp"
#include "advamd/checkpoint.hpp"
#include "advamd/config.hpp"
#include "advamd/data.hpp"
#include "advamd/error.hpp"
#include "advamd/experiment.hpp"
#include "advamd/hash.hpp"
#include "advamd/metrics.hpp"
#include "advamd/nn.hpp"
#include "advamd/optim.hpp"
#include "advamd/random.hpp"
#include "advamd/svg.hpp"
#include "advamd/tensor.hpp"
#include "advamd/theory.hpp"
#include "advamd/vulnerability.hpp"

#pragma once

#include "samsa/verification/complexity.hpp"
#include "samsa/verification/distribution.hpp"
#include "samsa/verification/gradcheck.hpp"
#include "samsa/verification/oracle.hpp"
#include "samsa/verification/suite.hpp"

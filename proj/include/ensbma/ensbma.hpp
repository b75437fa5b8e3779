#ifndef ENSBMA_ENSBMA_HPP
#define ENSBMA_ENSBMA_HPP

#include "ensbma/date.hpp"
#include "ensbma/types.hpp"
#include "ensbma/dataset.hpp"
#include "ensbma/normal.hpp"
#include "ensbma/estimation.hpp"
#include "ensbma/predictive.hpp"
#include "ensbma/verification.hpp"
#include "ensbma/pipeline.hpp"
#include "ensbma/synth.hpp"

#endif  // ENSBMA_ENSBMA_HPP

#pragma once

#include "dcmatch/checkpoint.hpp"
#include "dcmatch/corpus.hpp"
#include "dcmatch/dc_losses.hpp"
#include "dcmatch/distant_labeler.hpp"
#include "dcmatch/distribution.hpp"
#include "dcmatch/encoder.hpp"
#include "dcmatch/metrics.hpp"
#include "dcmatch/synthetic.hpp"
#include "dcmatch/trainer.hpp"

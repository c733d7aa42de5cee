#pragma once

#include "neuroalign/core/config.hpp"
#include "neuroalign/core/log.hpp"
#include "neuroalign/core/registry.hpp"
#include "neuroalign/core/types.hpp"
#include "neuroalign/data/array_io.hpp"
#include "neuroalign/data/dataset.hpp"
#include "neuroalign/data/embeddings.hpp"
#include "neuroalign/data/preprocess.hpp"
#include "neuroalign/data/synthetic.hpp"
#include "neuroalign/encoders/encoder.hpp"
#include "neuroalign/evaluation/retrieval.hpp"
#include "neuroalign/evaluation/wilcoxon.hpp"
#include "neuroalign/experiment.hpp"
#include "neuroalign/interpret/montage.hpp"
#include "neuroalign/interpret/png.hpp"
#include "neuroalign/interpret/saliency.hpp"
#include "neuroalign/interpret/time_frequency.hpp"
#include "neuroalign/interpret/topomap.hpp"
#include "neuroalign/losses/contrastive.hpp"
#include "neuroalign/training/adamw.hpp"
#include "neuroalign/training/checkpoint.hpp"
#include "neuroalign/training/trainer.hpp"

#pragma once

#include "qfa/embedding.hpp"
#include "qfa/embedding_cache.hpp"
#include "qfa/encoder.hpp"
#include "qfa/errors.hpp"
#include "qfa/evaluation.hpp"
#include "qfa/hash.hpp"
#include "qfa/io.hpp"
#include "qfa/objectives.hpp"
#include "qfa/optimizers.hpp"
#include "qfa/perturbation.hpp"
#include "qfa/relaxed.hpp"
#include "qfa/remote_encoder.hpp"
#include "qfa/synthetic_encoder.hpp"
#include "qfa/text.hpp"

namespace qfa {
inline constexpr const char* kVersion = "0.1.0";
}

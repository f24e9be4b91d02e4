#pragma once

// JSON mappings for configuration structs. Missing keys keep their defaults.

#include <json.hpp>

#include "daobs/adaptation.hpp"
#include "daobs/imaging.hpp"
#include "daobs/observers.hpp"
#include "daobs/optimizer.hpp"
#include "daobs/training.hpp"

namespace daobs {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GridSpec, width, height)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Point, x, y)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SystemParams, height, blur)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SignalParams, amplitude, center, width)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LumpyParams, mean_count, amplitude, lump_width)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(NoiseParams, sigma)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GenerationConfig, domain_tag, grid, system, signal, lumpy, noise,
                                                shared_background)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DatasetMeta, config, seed, n_pairs, note)

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AdamOptions, learning_rate, beta1, beta2, epsilon)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EncoderOptions, blocks, channels, kernel, stride, slope, pool)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(HeadOptions, onn_hidden, critic_hidden, slope)

// Seeds are derived from the experiment's master seed and are not part of these mappings.
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, batch_size, adam, max_epochs, validation_period, encoder,
                                                heads)

NLOHMANN_JSON_SERIALIZE_ENUM(LipschitzMode, {{LipschitzMode::GradientPenalty, "gradient_penalty"},
                                             {LipschitzMode::WeightClipping, "weight_clipping"}})

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AdaptConfig, n_critic, mode, penalty_weight, clip, dam_adam, dcm_adam,
                                                batch_size, iterations, validation_period, warm_start, heads)

}  // namespace daobs

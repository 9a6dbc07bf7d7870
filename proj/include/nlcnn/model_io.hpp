#pragma once

#include <cstdint>
#include <filesystem>

#include "json.hpp"

#include "nlcnn/network.hpp"
#include "nlcnn/trainer.hpp"

namespace nlcnn {

// Weight file layout (all integers little-endian):
//   "NLCW" | u16 version | u32 header length | header JSON (UTF-8) | payload
// The payload holds every array of Network::state_arrays() as f32, in order.
// The header records hyper-parameters, the layer list, the seed, the
// batch-norm update counts, the metrics summary, the payload scalar count and
// a CRC-32 of the payload bytes.
inline constexpr std::uint16_t kWeightFileVersion = 1;

nlohmann::json hyperparams_to_json(const HyperParams& hp);
HyperParams hyperparams_from_json(const nlohmann::json& j);

void save_model(const Network<float>& net, const RunMetrics* metrics, const std::filesystem::path& path);

struct LoadedModel {
    Network<float> network;
    HyperParams hp;
    nlohmann::json header;
};

LoadedModel load_model(const std::filesystem::path& path);

}  // namespace nlcnn

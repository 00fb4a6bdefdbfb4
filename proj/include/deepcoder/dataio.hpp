#pragma once

// File formats, configuration and the synthetic ordinal-image generator.
//
// Dataset: a JSON manifest at <stem>.json naming two payloads next to it,
//   <stem>.images.f32  little-endian float32, row-major [N, C, H, W]
//   <stem>.labels.csv  header "index,subject,au_1,...,au_Q", one row per sample
//
// Checkpoint: "DC2C", u32 version, u64 metadata length, metadata JSON, then
// the float64 parameter blocks listed in metadata["blocks"], in that order.

#include <cstdint>
#include <filesystem>
#include <string>

#include "deepcoder/dataset.hpp"
#include "deepcoder/trainer.hpp"

namespace deepcoder::dataio {

struct SyntheticSpec {
    std::size_t height = 32, width = 32;
    std::size_t outputs = 3;  // Q blob sites on a ring
    int levels = 4;
    std::size_t subjects = 8;
    std::size_t samples = 1200;
    double blob_gain = 0.8;     // peak amplitude at the top level
    double blob_sigma = 0.08;   // fraction of min(H, W)
    double offset_scale = 0.2;  // per-subject smooth background
    double noise = 0.05;
    std::uint64_t subject_seed = 1;  // subject appearance
    std::uint64_t seed = 0;          // per-sample draws

    void validate() const;
    friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

/// Pixel values are rounded to float32 so that a saved dataset reloads bit-exactly.
Dataset generate_synthetic(const SyntheticSpec& spec);

/// Noise-free render of one sample for a given subject (used by tests).
Tensor render_sample(const SyntheticSpec& spec, int subject, const std::vector<int>& levels);

inline constexpr const char* kDatasetFormat = "deepcoder-dataset";
inline constexpr int kDatasetVersion = 1;

/// `manifest` is the .json path; payload names derive from its stem.
void save_dataset(const Dataset& data, const std::filesystem::path& manifest);
/// Throws FormatError naming the offending field.
Dataset load_dataset(const std::filesystem::path& manifest);

struct Config {
    SyntheticSpec synth;
    trainer::TrainConfig train;
    friend bool operator==(const Config&, const Config&) = default;
};

/// Unknown keys, type mismatches and malformed literals throw ConfigError with the key path.
Config parse_config_string(const std::string& text);
Config parse_config(const std::filesystem::path& path);
/// Full document with every key, parseable by parse_config_string.
std::string config_to_string(const Config& config);

inline constexpr char kCheckpointMagic[4] = {'D', 'C', '2', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const trainer::TrainState& state, const std::filesystem::path& path);
trainer::TrainState load_checkpoint(const std::filesystem::path& path);

/// Per-epoch CSV: epoch,L_kl_X,L_r_X,L_p_X,L_kl_Z0,L_r_Z0,L_o_Z0,L_DC,alpha,beta,wall_seconds
std::string metrics_csv_header();
std::string metrics_csv_row(const trainer::EpochRecord& r);

}  // namespace deepcoder::dataio

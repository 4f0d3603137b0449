#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "momok/model.hpp"

namespace momok {

enum class CorruptScenario { none, noise, missing, sparse };
CorruptScenario scenario_from_name(const std::string& name);  // throws ConfigError
const char* scenario_name(CorruptScenario s);

// Flat `key = value` run configuration. Every key is overridable from the
// command line; unknown keys are rejected.
struct RunConfig {
    // data
    std::string train_path;
    std::string valid_path;
    std::string test_path;
    std::string image_features_path;
    std::string text_features_path;
    bool standardize_features = true;

    // model
    std::size_t dim = 250;
    std::size_t relation_dim = 0;  // 0 -> dim
    std::size_t experts = 3;
    std::size_t expert_hidden = 0;
    std::size_t gate_hidden = 0;
    std::size_t proj_hidden = 0;
    std::size_t q_hidden = 0;
    std::size_t struct_dim = 0;
    std::vector<Modality> modalities = {Modality::structure, Modality::image,
                                        Modality::text};

    // training
    double lambda = 1e-4;
    double lr = 1e-3;
    double q_lr = 0.0;  // 0 -> lr
    std::size_t batch_size = 1024;
    std::size_t epochs = 100;
    std::uint64_t seed = 42;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t exid_steps = 1;  // Q updates per model step

    // ablation flags
    bool use_noise = true;
    bool use_relation_temperature = true;
    bool use_adaptive_fusion = true;
    bool use_joint_training = true;
    bool use_exid = true;
    bool per_modality_temperature = false;
    bool club_unnormalized = false;

    // training-time corruption scenario
    CorruptScenario corrupt_scenario = CorruptScenario::none;
    double corrupt_ratio = 0.0;
    double corrupt_scale = 1.0;
    std::uint64_t corrupt_seed = 7;
    std::vector<Modality> corrupt_modalities = {Modality::image, Modality::text};

    // evaluation
    bool tie_split = false;
    std::size_t eval_threads = 1;  // 0 -> hardware concurrency

    // output
    std::string out_dir = "out";

    static const std::vector<std::string>& keys();
    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;
    void validate() const;
    ModelConfig model_config() const;
};

std::string modalities_to_string(const std::vector<Modality>& mods);
std::vector<Modality> modalities_from_string(const std::string& text);

RunConfig parse_config_file(const std::string& path);
void apply_overrides(RunConfig& cfg,
                     const std::vector<std::pair<std::string, std::string>>& overrides);

}  // namespace momok

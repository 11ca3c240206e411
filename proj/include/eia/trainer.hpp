// Benign pretraining: synthetic instruction-following tasks drawn from the
// same page distribution the evaluation uses, with disjoint content pools.
// Plain SGD with per-tensor gradient clipping; fixed seed gives identical
// final checkpoints.
#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "eia/envsim.hpp"
#include "eia/model.hpp"
#include "eia/rng.hpp"

namespace eia::train {

struct DivergenceDetected : std::runtime_error {
    explicit DivergenceDetected(const std::string& what) : std::runtime_error("divergence: " + what) {}
};
struct EmptySet : std::runtime_error {
    explicit EmptySet(const std::string& what) : std::runtime_error("empty set: " + what) {}
};

struct TrainTask {
    env::PageInstance page;
    Raster shot;
    std::string instruction;
    std::vector<std::string> history;
    std::string gold_action;
};

struct TrainConfig {
    int steps = 3200;
    int batch = 8;
    double lr = 1.0;
    double clip_norm = 1.0;
    std::uint64_t seed = 1;
};

// gold action implied by (page, instruction): label/ordinal clicks on listing
// pages, partner-site navigation, stop on detail views
std::string rulebook_gold(const env::PageInstance& page, const env::ContentCorpus& corpus,
                          const std::string& instruction);

std::vector<TrainTask> gen_training_batch(const env::EnvHandle& handle, Pool pool, Rng& rng, std::size_t n);

struct TrainReport {
    std::vector<double> loss_curve;
    double final_benign_accuracy = 0.0;
};

TrainReport train_agent(agent::Model& model, const env::EnvHandle& handle, const TrainConfig& cfg);

double eval_benign_accuracy(const agent::Model& model, std::span<const TrainTask> tasks);

// teacher-forced mean token cross-entropy of gold actions, shared by the
// trainer and its tests
num::Tensor task_loss(const agent::Model& model, const TrainTask& task);

} // namespace eia::train

#pragma once

// Run configuration: JSON schema, strict parsing and the run directory layout.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ewclab/datagen.hpp"
#include "ewclab/evalanalysis.hpp"
#include "ewclab/model.hpp"
#include "ewclab/training.hpp"

namespace ewclab {

struct ArithDataConfig {
    std::size_t n_train = 4000;
    std::size_t n_test = 500;
    ExponentDist dist;
    std::uint64_t seed = 1;

    friend bool operator==(const ArithDataConfig&, const ArithDataConfig&) = default;
};

struct DataConfig {
    ArithDataConfig arith;
    CorpusSpec corpus_a{Grammar::A, 2000, 0.15, 1, 4};
    CorpusSpec corpus_b{Grammar::B, 2000, 0.15, 1, 4};
    // Held-out corpora reuse the training spec with this many records and
    // seed + 1000; the arithmetic test set uses arith.seed + 1000.
    std::size_t heldout_sentences = 500;

    friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct EwcRunConfig {
    // Fixed lambda; unset means "take it from the sweep".
    std::optional<double> lambda;
    std::size_t fisher_samples = 1000;
    std::vector<double> grid;
    // A grid lambda counts as converged when its tail CE is at most
    // select_ratio times the unconstrained run's tail CE.
    double select_ratio = 1.5;
    std::size_t select_window = 20;

    friend bool operator==(const EwcRunConfig&, const EwcRunConfig&) = default;
};

struct AnalysisConfig {
    int layer = 1;
    std::size_t vital_n = 800;
    TsneConfig tsne;

    friend bool operator==(const AnalysisConfig&, const AnalysisConfig&) = default;
};

// The seed fields inside model / pretrain / opt are replaced by each entry of
// `seeds` when a run executes; see for_seed.
struct RunConfig {
    std::string run_name = "default";
    ModelConfig model;
    OptConfig pretrain;
    OptConfig opt;
    DataConfig data;
    EwcRunConfig ewc;
    AnalysisConfig analysis;
    std::vector<std::uint64_t> seeds{1, 2};
    std::filesystem::path output_dir = "runs";

    RunConfig();
    void validate() const;
    // Copy with every init / shuffle seed set to `seed`.
    RunConfig for_seed(std::uint64_t seed) const;
    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);
// Missing keys keep their defaults; unknown keys and wrong types raise Config.
RunConfig run_config_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& c, const std::filesystem::path& path);

// <output_dir>/<run_name>/{config.json, checkpoints/, traces/, reports/}
struct RunLayout {
    std::filesystem::path root;

    explicit RunLayout(const RunConfig& c) : root(c.output_dir / c.run_name) {}
    std::filesystem::path config() const { return root / "config.json"; }
    std::filesystem::path checkpoints() const { return root / "checkpoints"; }
    std::filesystem::path traces() const { return root / "traces"; }
    std::filesystem::path reports() const { return root / "reports"; }
    std::filesystem::path data() const { return root / "data"; }
    void create() const;
};

// Filename fragments such as "seed1" and "lambda1e+07".
std::string seed_tag(std::uint64_t seed);
std::string lambda_tag(double lambda);

} // namespace ewclab

#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace milc {

struct GenerateOptions {
    std::optional<std::string> config_path;
    std::optional<std::string> preset;
    std::optional<uint64_t> seed;
    std::optional<size_t> n_train;  // override train split size
    std::optional<std::string> idx_images;
    std::optional<std::string> idx_labels;
    std::optional<std::string> out;
};

struct TrainOptions {
    std::optional<std::string> config_path;
    std::optional<std::string> preset;
    std::optional<std::string> data_dir;  // preset mode: root with train/validation/test packs
    std::optional<std::string> pooling;
    std::optional<uint64_t> seed;  // replaces the seed list with this one seed
    std::optional<size_t> mc_passes;
    std::optional<std::string> out;
    size_t jobs = 1;
};

struct EvalOptions {
    std::string checkpoint;
    std::string data;
    std::string pooling = "certainty";
    size_t mc_passes = 10;
    double eps = 1e-6;
    uint64_t seed = 0;
    size_t top_n = 10;
    std::string out;
};

int cmd_generate(const GenerateOptions& opt);
int cmd_train(const TrainOptions& opt);
int cmd_eval(const EvalOptions& opt);

/// Parses argv, dispatches, and maps library errors to exit codes:
/// 2 config/usage, 3 I/O or file format, 4 all seeds failed.
int run_cli(int argc, char** argv);

}  // namespace milc

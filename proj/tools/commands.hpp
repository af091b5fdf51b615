#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>

#include "bga/config.hpp"

namespace bga::cli {

/// A checkpoint that does not fit the configuration it is used with.
class MismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes train/dev/test JSON-lines files and schema.json into `out_dir`.
void gen_data(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log);

/// Trains on `data_dir`/train.jsonl with dev selection; writes model.ckpt,
/// metrics.json and config.ini into `out_dir`.
void train(const RunConfig& cfg, const std::filesystem::path& data_dir, const std::filesystem::path& out_dir,
           std::ostream& log);

/// `data` is a split file (.jsonl, or CoNLL otherwise) or a directory holding <split>.jsonl.
std::filesystem::path resolve_split(const std::filesystem::path& data, const std::string& split);

/// Loads a checkpoint; with a configuration, its declared widths must agree.
BgaModel open_checkpoint(const std::filesystem::path& path, const std::optional<RunConfig>& cfg);

std::string eval(const BgaModel& model, const std::filesystem::path& split_file);

/// One sentence per line, whitespace-separated tokens; writes "token\tlabel"
/// blocks separated by blank lines.
void infer(const BgaModel& model, const std::filesystem::path& text_file, std::ostream& out);

void inspect_masks(const BgaModel& model, const std::filesystem::path& split_file, std::size_t index,
                   std::ostream& out);

/// Scores the sample's own image against `k` distractor images drawn with `seed`.
void align_sim(const BgaModel& model, const std::filesystem::path& split_file, std::size_t index, std::size_t k,
               std::uint64_t seed, std::ostream& out);

/// Runs the finite-difference suite; true when every entry passes.
bool gradcheck(std::uint64_t seed, std::ostream& out);

}  // namespace bga::cli

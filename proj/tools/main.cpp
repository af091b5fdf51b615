#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "commands.hpp"
#include "json.hpp"

namespace {

int report_error(const std::string& kind, const std::string& message) {
  nlohmann::json line{{"error", kind}, {"message", message}};
  std::cerr << line.dump() << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace bga;
  CLI::App app{"Bidirectional generative alignment tagger: synthetic data, training and analysis"};
  app.require_subcommand(1);

  std::string config_path, data, out, checkpoint, split = "test";
  std::optional<std::uint64_t> seed;
  std::size_t index = 0, k = 3;

  auto add_config = [&](CLI::App* cmd, bool required) {
    auto* opt = cmd->add_option("--config", config_path, "Configuration file (key = value, [sections])");
    if (required) opt->required();
    cmd->add_option("--seed", seed, "Overrides the configured seed");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic paired corpus");
  add_config(gen, false);
  gen->add_option("--out", out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train a model and keep the best dev checkpoint");
  add_config(tr, false);
  tr->add_option("--data", data, "Corpus directory with train/dev splits")->required();
  tr->add_option("--out", out, "Output directory")->required();

  auto* ev = app.add_subcommand("eval", "Print metrics JSON for a split");
  add_config(ev, false);
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--data", data, "Split file or corpus directory")->required();
  ev->add_option("--split", split, "Split name when --data is a directory");

  auto* inf = app.add_subcommand("infer", "Tag sentences (one per line) without images");
  add_config(inf, false);
  inf->add_option("--checkpoint", checkpoint)->required();
  inf->add_option("--data", data, "Text file, one whitespace-tokenized sentence per line")->required();

  auto* masks = app.add_subcommand("inspect-masks", "Per-layer keep/drop decisions for one sample");
  add_config(masks, false);
  masks->add_option("--checkpoint", checkpoint)->required();
  masks->add_option("--data", data)->required();
  masks->add_option("--split", split);
  masks->add_option("--index", index, "Sample index");

  auto* align = app.add_subcommand("align-sim", "Pseudo visual feature vs paired and distractor images");
  add_config(align, false);
  align->add_option("--checkpoint", checkpoint)->required();
  align->add_option("--data", data)->required();
  align->add_option("--split", split);
  align->add_option("--index", index, "Sample index");
  align->add_option("--k", k, "Number of distractor images");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  grad->add_option("--seed", seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what());
  }

  try {
    std::optional<RunConfig> cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);
    auto resolved = [&] {
      RunConfig c = cfg.value_or(RunConfig{});
      if (seed) c.seed = *seed;
      c.validate();
      return c;
    };

    if (*gen) {
      cli::gen_data(resolved(), out, std::cerr);
    } else if (*tr) {
      cli::train(resolved(), data, out, std::cerr);
    } else if (*ev) {
      auto model = cli::open_checkpoint(checkpoint, cfg);
      std::cout << cli::eval(model, cli::resolve_split(data, split)) << "\n";
    } else if (*inf) {
      cli::infer(cli::open_checkpoint(checkpoint, cfg), data, std::cout);
    } else if (*masks) {
      cli::inspect_masks(cli::open_checkpoint(checkpoint, cfg), cli::resolve_split(data, split), index, std::cout);
    } else if (*align) {
      cli::align_sim(cli::open_checkpoint(checkpoint, cfg), cli::resolve_split(data, split), index, k,
                     seed.value_or(resolved().seed), std::cout);
    } else if (*grad) {
      return cli::gradcheck(seed.value_or(2024), std::cout) ? 0 : 1;
    }
  } catch (const ConfigError& e) {
    return report_error("config", e.what());
  } catch (const cli::MismatchError& e) {
    return report_error("mismatch", e.what());
  } catch (const DataError& e) {
    return report_error("data", e.what());
  } catch (const NumericError& e) {
    return report_error("numeric", e.what());
  } catch (const std::exception& e) {
    return report_error("invalid", e.what());
  }
  return 0;
}

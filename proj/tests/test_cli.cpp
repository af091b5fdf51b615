#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace bga;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"(seed = 5
# small enough to train in a second
[model]
d = 8
heads = 2
layers = 2
max_len = 8

[data]
types = PER, LOC
raw_dim = 6
patches = 3
forms_per_type = 2
context_words = 6
min_words = 2
max_words = 4
max_mentions = 1
train_size = 16
dev_size = 4
test_size = 4

[train]
epochs = 2
batch_size = 4
)";

RunConfig tiny() {
  std::istringstream in(kTinyConfig);
  return parse_run_config(in, "tiny.ini");
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("bga_test_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string parse_error(const std::string& text) {
  std::istringstream in(text);
  try {
    parse_run_config(in, "x.ini");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream ss(s);
  for (std::string l; std::getline(ss, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("config parsing") {
  auto cfg = tiny();
  CHECK(cfg.seed == 5);
  CHECK(cfg.model.d == 8);
  CHECK(cfg.data.types == std::vector<std::string>{"PER", "LOC"});
  CHECK(cfg.sizes.train == 16);
  CHECK(cfg.train.epochs == 2);
  CHECK(cfg.model.alpha == ModelConfig{}.alpha);
  CHECK(cfg.model_config().patches == 3);
  CHECK(cfg.model_config().raw_dim == 6);

  SUBCASE("errors name the line") {
    CHECK(parse_error("[model]\nd = 8\nwidth = 3\n").find("x.ini:3: unknown key 'model.width'") == 0);
    CHECK(parse_error("seed = 1\n[train]\nlr = 0.1\nlr = 0.2\n").find("x.ini:4: repeated key 'train.lr'") == 0);
    CHECK(parse_error("[data]\n\npatches = many\n").find("x.ini:3: data.patches") == 0);
    CHECK(parse_error("[model]\ntext_only = yes\n").find("x.ini:2:") == 0);
    CHECK(parse_error("[optim]\n").find("x.ini:1: unknown section") == 0);
    CHECK(parse_error("[model]\nd 8\n").find("x.ini:2:") == 0);
    CHECK(parse_error("[data]\ntypes = PER,,LOC\n").find("x.ini:2:") == 0);
  }
  SUBCASE("cross-field validation") {
    CHECK(parse_error("[model]\nd = 10\nheads = 4\n").find("x.ini:") == 0);
    CHECK(parse_error("[model]\nmax_len = 6\n").find("max_len") != std::string::npos);
  }
  SUBCASE("format round trip") {
    cfg.model.alpha = 0.125;
    cfg.model.keep_ratio = 0.7;
    cfg.model.text_only = true;
    cfg.train.lr = 1e-4;
    const auto text = format_run_config(cfg);
    std::istringstream in(text);
    auto back = parse_run_config(in);
    CHECK(format_run_config(back) == text);
    CHECK(back.model.alpha == 0.125);
    CHECK(back.model.keep_ratio == 0.7);
    CHECK(back.model.text_only);
    CHECK(back.train.lr == 1e-4);
    CHECK(back.data.types == cfg.data.types);
  }
}

TEST_CASE("commands") {
  TempDir tmp("commands");
  const auto cfg = tiny();
  std::ostringstream log;
  const auto data = tmp.path / "data";
  cli::gen_data(cfg, data, log);
  for (const char* f : {"train.jsonl", "dev.jsonl", "test.jsonl", "schema.json"}) REQUIRE(fs::exists(data / f));

  SUBCASE("gen-data is deterministic") {
    cli::gen_data(cfg, tmp.path / "again", log);
    for (const char* f : {"train.jsonl", "dev.jsonl", "test.jsonl", "schema.json"})
      CHECK(slurp(data / f) == slurp(tmp.path / "again" / f));
  }

  cli::train(cfg, data, tmp.path / "run1", log);
  const auto ckpt = tmp.path / "run1" / "model.ckpt";
  REQUIRE(fs::exists(ckpt));

  SUBCASE("train is deterministic and writes its records") {
    cli::train(cfg, data, tmp.path / "run2", log);
    CHECK(slurp(ckpt) == slurp(tmp.path / "run2" / "model.ckpt"));
    auto metrics = nlohmann::json::parse(slurp(tmp.path / "run1" / "metrics.json"));
    REQUIRE(metrics["epochs"].size() == 2);
    for (const auto& e : metrics["epochs"]) {
      CHECK(e["loss"].contains("ratio"));
      CHECK(e["dev"]["overall"]["f1"].get<double>() >= 0.0);
    }
    auto saved = load_run_config(tmp.path / "run1" / "config.ini");
    CHECK(format_run_config(saved) == format_run_config(cfg));
  }
  SUBCASE("eval") {
    auto model = cli::open_checkpoint(ckpt, cfg);
    auto j = nlohmann::json::parse(cli::eval(model, cli::resolve_split(data, "test")));
    CHECK(j.contains("overall"));
    CHECK(j["per_type"].size() == 2);
    auto direct = evaluate(model, encode_examples(load_jsonl(data / "test.jsonl"), model.vocab(), model.labels()));
    CHECK(j["overall"]["f1"].get<double>() == direct.overall.f1);
    CHECK_THROWS_AS(cli::eval(model, data / "missing.jsonl"), DataError);
  }
  SUBCASE("checkpoint and config must agree") {
    auto other = cfg;
    other.model.d = 12;
    CHECK_THROWS_AS(cli::open_checkpoint(ckpt, other), cli::MismatchError);
    other = cfg;
    other.data.types = {"PER", "ORG"};
    CHECK_THROWS_AS(cli::open_checkpoint(ckpt, other), cli::MismatchError);
    CHECK_NOTHROW(cli::open_checkpoint(ckpt, std::nullopt));
  }
  SUBCASE("infer writes token/label blocks") {
    const auto text = tmp.path / "sentences.txt";
    std::ofstream(text) << "a b c\n\nd e\n";
    std::ostringstream out;
    cli::infer(cli::open_checkpoint(ckpt, cfg), text, out);
    auto ls = lines(out.str());
    REQUIRE(ls.size() == 6);
    CHECK(ls[0].rfind("a\t", 0) == 0);
    CHECK(ls[2].rfind("c\t", 0) == 0);
    CHECK(ls[3].empty());
    CHECK(ls[5].rfind("e\t", 0) == 0);
    LabelSet labels(cfg.data.types);
    for (const auto& l : ls) {
      if (l.empty()) continue;
      CHECK_NOTHROW(labels.index(l.substr(l.find('\t') + 1)));
    }
  }
  SUBCASE("inspect-masks and align-sim") {
    auto model = cli::open_checkpoint(ckpt, cfg);
    const auto split = cli::resolve_split(data, "train");
    auto examples = load_jsonl(split);
    std::size_t with_image = 0;
    while (!examples[with_image].has_image) ++with_image;

    std::ostringstream masks;
    cli::inspect_masks(model, split, with_image, masks);
    auto ls = lines(masks.str());
    CHECK(ls.size() == 1 + 2 * cfg.model.layers);
    CHECK(ls[1].find("[CLS]=") != std::string::npos);

    std::ostringstream align;
    cli::align_sim(model, split, with_image, 3, 9, align);
    ls = lines(align.str());
    REQUIRE(ls.size() == 6);
    CHECK(ls[1].rfind("paired\t" + std::to_string(with_image) + "\t", 0) == 0);
    CHECK(ls[5].rfind("paired image ranks first: ", 0) == 0);
    CHECK_THROWS_AS(cli::align_sim(model, split, with_image, 100, 9, align), std::invalid_argument);
    CHECK_THROWS_AS(cli::inspect_masks(model, split, examples.size(), masks), std::out_of_range);
  }
}

TEST_CASE("gradcheck command") {
  std::ostringstream out;
  CHECK(cli::gradcheck(2024, out));
  auto ls = lines(out.str());
  REQUIRE_FALSE(ls.empty());
  CHECK(ls.back().rfind("PASS max rel error", 0) == 0);
}

TEST_CASE("binary reports errors as one JSON line") {
  TempDir tmp("binary");
  const auto err = tmp.path / "err.txt";
  const auto bad = tmp.path / "bad.ini";
  std::ofstream(bad) << "[model]\nwidth = 3\n";
  const std::string cmd = std::string(BGA_BINARY) + " gen-data --config " + bad.string() + " --out " +
                          (tmp.path / "out").string() + " 2> " + err.string();
  CHECK(std::system(cmd.c_str()) != 0);
  auto j = nlohmann::json::parse(slurp(err));
  CHECK(j["error"] == "config");
  CHECK(j["message"].get<std::string>().find("bad.ini:2") != std::string::npos);
  CHECK_FALSE(fs::exists(tmp.path / "out"));
}

#include "cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "rofl/attacks.hpp"
#include "rofl/checkpoint.hpp"
#include "rofl/checkpoint_oracle.hpp"
#include "rofl/corpus.hpp"
#include "rofl/error.hpp"
#include "rofl/fpgen.hpp"
#include "rofl/ledger.hpp"
#include "rofl/lineage.hpp"
#include "rofl/quantize.hpp"
#include "rofl/train.hpp"
#include "rofl/verify.hpp"

namespace rofl::cli {

namespace {

// Domain outcome that is not an exception (e.g. a commitment that does not open).
struct Failed {
  std::string message;
};

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Writes to path, or to out when path is empty or "-".
void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    out.flush();
    return;
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f << text;
  if (!f.flush()) throw IoError("write failed: " + path);
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

std::shared_ptr<const Model> load_model(const std::string& path) {
  return std::make_shared<const Model>(load(path));
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

CLI::Option* add_seed(CLI::App* app, std::uint64_t& seed) {
  return app->add_option("--seed", seed, "Random seed (falls back to $ROFL_SEED, then 0)")
      ->envname("ROFL_SEED")
      ->capture_default_str();
}

struct GcgFlags {
  GcgConfig cfg;
  std::vector<std::string> tasks;
  std::vector<std::string> systems{"empty"};

  void add(CLI::App* app) {
    app->add_option("--task", tasks, "Derivative checkpoint added to the optimization task set (repeatable)");
    app->add_option("--system", systems, "Named system prompt(s) to optimize under (repeatable)")
        ->capture_default_str();
    app->add_option("--prefix-len", cfg.prefix_len, "Random prefix tokens")->capture_default_str();
    app->add_option("--suffix-len", cfg.suffix_len, "Optimized suffix tokens")->capture_default_str();
    app->add_option("--resp-len", cfg.resp_len, "Response tokens")->capture_default_str();
    app->add_option("--k-bottom", cfg.k_bottom, "Bottom-k width for suffix initialization")->capture_default_str();
    app->add_option("--topk", cfg.topk_grad, "Gradient candidates per position")->capture_default_str();
    app->add_option("--batch", cfg.batch, "Candidates evaluated per step")->capture_default_str();
    app->add_option("--max-epochs", cfg.max_epochs, "Optimization step limit")->capture_default_str();
    app->add_option("--trials", cfg.n_trials, "Successful trials required before stopping")->capture_default_str();
  }

  TaskSet task_set(const std::string& base) const {
    TaskSet ts;
    ts.models.push_back(load_model(base));
    for (const auto& t : tasks) ts.models.push_back(load_model(t));
    ts.system_prompts = system_prompt_variants(systems);
    return ts;
  }
};

struct DecodeFlags {
  std::string mode = "greedy";
  double temperature = 0.0;
  std::uint32_t k = 1;

  void add(CLI::App* app) {
    app->add_option("--mode", mode, "greedy or sampled")
        ->check(CLI::IsMember({"greedy", "sampled"}))
        ->capture_default_str();
    app->add_option("--temperature", temperature, "Sampling temperature (sampled mode)")->capture_default_str();
    app->add_option("--k", k, "Queries per fingerprint in sampled mode")->capture_default_str();
  }

  DecodeParams params(std::uint64_t seed) const {
    DecodeParams p;
    p.mode = mode == "sampled" ? DecodeMode::Sampled : DecodeMode::Greedy;
    p.temperature = temperature;
    p.k = k;
    p.seed = seed;
    p.validate();
    return p;
  }
};

class Cli {
 public:
  Cli(std::ostream& out, std::ostream& err) : out_(out), err_(err) { build(); }

  int run(const std::vector<std::string>& args) {
    if (args.empty()) {
      err_ << app_.help();
      return kUsageError;
    }
    std::vector<const char*> argv{"rofl"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
      app_.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
      out_ << help_for(app_);
      return kOk;
    } catch (const CLI::CallForAllHelp&) {
      out_ << app_.help("", CLI::AppFormatMode::All);
      return kOk;
    } catch (const CLI::ParseError& e) {
      err_ << "error: " << e.what() << "\n\n" << help_for(app_);
      return kUsageError;
    }
    if (!action_) {
      err_ << help_for(app_);
      return kUsageError;
    }
    try {
      action_();
    } catch (const Failed& f) {
      err_ << f.message << '\n';
      return kDomainError;
    } catch (const std::exception& e) {
      err_ << "error: " << e.what() << '\n';
      return kDomainError;
    }
    return kOk;
  }

 private:
  // Help of the deepest subcommand that was selected.
  static std::string help_for(CLI::App& app) {
    CLI::App* cur = &app;
    for (;;) {
      auto subs = cur->get_subcommands();
      if (subs.empty()) break;
      cur = subs.front();
    }
    return cur->help();
  }

  template <typename Opts>
  CLI::App* command(CLI::App* parent, const std::string& name, const std::string& desc,
                    std::function<void(CLI::App*, Opts&)> setup, std::function<void(const Opts&)> run) {
    auto opts = std::make_shared<Opts>();
    CLI::App* sub = parent->add_subcommand(name, desc);
    setup(sub, *opts);
    sub->callback([this, opts, run] { action_ = [opts, run] { run(*opts); }; });
    return sub;
  }

  void build();
  void build_train();
  void build_lineage();
  void build_fp();
  void build_ledger();
  void build_attack();
  void build_report();

  std::ostream& out_;
  std::ostream& err_;
  CLI::App app_{"Ownership fingerprints for small decoder-only language models", "rofl"};
  std::function<void()> action_;
};

void Cli::build() {
  app_.require_subcommand(1);
  app_.fallthrough(false);
  build_train();
  build_lineage();
  build_fp();
  build_ledger();
  build_attack();
  build_report();
}

// ---- train / finetune / quantize -----------------------------------------

struct TrainOpts {
  ModelConfig model;
  TrainConfig train;
  std::uint32_t slice = 0;
  std::string corpus_file;
  std::size_t corpus_bytes = 200000;
  std::uint64_t corpus_seed = 0;
  std::uint64_t seed = 0;
  std::string out;
};

struct FinetuneOpts {
  std::string base;
  std::string dataset;
  std::size_t dataset_bytes = 20000;
  std::uint64_t dataset_seed = 0;
  TrainConfig train;
  std::uint32_t lora_rank = 0;
  std::uint64_t seed = 0;
  std::string out;
};

struct QuantOpts {
  std::string in;
  std::uint32_t bits = 8;
  std::string out;
};

void add_finetune_flags(CLI::App* app, TrainConfig& t) {
  app->add_option("--epochs", t.epochs, "Passes over the dataset")->capture_default_str();
  app->add_option("--lr", t.learning_rate, "Peak learning rate")->capture_default_str();
  app->add_option("--batch", t.batch_size, "Examples per optimizer step")->capture_default_str();
  app->add_option("--warmup", t.warmup_steps, "Linear warmup steps")->capture_default_str();
}

void Cli::build_train() {
  command<TrainOpts>(
      &app_, "train", "Pretrain a base model from scratch on a corpus",
      [](CLI::App* app, TrainOpts& o) {
        o.train.batch_size = 1;
        app->add_option("--out", o.out, "Output checkpoint")->required();
        app->add_option("--corpus-slice", o.slice, "Bundled corpus slice (0-3)")->capture_default_str();
        app->add_option("--corpus-file", o.corpus_file, "Train on this text file instead of a bundled slice");
        app->add_option("--corpus-bytes", o.corpus_bytes, "Bytes of bundled corpus to generate")
            ->capture_default_str();
        app->add_option("--corpus-seed", o.corpus_seed, "Seed of the bundled corpus generator")->capture_default_str();
        app->add_option("--steps", o.train.steps, "Optimizer steps")->capture_default_str();
        app->add_option("--lr", o.train.learning_rate, "Peak learning rate")->capture_default_str();
        app->add_option("--batch", o.train.batch_size, "Windows per optimizer step")->capture_default_str();
        app->add_option("--seq-len", o.train.seq_len, "Window length (0 = context length)")->capture_default_str();
        app->add_option("--warmup", o.train.warmup_steps, "Linear warmup steps")->capture_default_str();
        app->add_option("--d-model", o.model.d_model, "Embedding width")->capture_default_str();
        app->add_option("--layers", o.model.n_layers, "Transformer blocks")->capture_default_str();
        app->add_option("--heads", o.model.n_heads, "Attention heads")->capture_default_str();
        app->add_option("--ctx", o.model.ctx_len, "Context length")->capture_default_str();
        add_seed(app, o.seed);
      },
      [this](const TrainOpts& o) {
        ModelConfig mc = o.model;
        mc.seed = o.seed;
        TrainConfig tc = o.train;
        tc.seed = o.seed;
        const std::string text =
            o.corpus_file.empty() ? corpus::text_slice(o.slice, o.corpus_bytes, o.corpus_seed) : read_text(o.corpus_file);
        const Checkpoint ckpt = train(mc, text, tc);
        save(ckpt, o.out);
        out_ << "checkpoint\t" << o.out << "\nlineage\t" << to_hex(ckpt.lineage_id) << "\nseed\t" << o.seed
             << "\nheld_out_ppl\t"
             << fmt("%.4f", perplexity(Model(ckpt), corpus::text_slice(o.slice, 4096, o.corpus_seed + 1000))) << '\n';
      });

  command<FinetuneOpts>(
      &app_, "finetune", "Full or LoRA finetuning of a checkpoint on a bundled instruction dataset",
      [](CLI::App* app, FinetuneOpts& o) {
        app->add_option("--base", o.base, "Checkpoint to adapt")->required();
        app->add_option("--dataset", o.dataset, "Dataset name or index (capitals, reverse, arithmetic, places, count)")
            ->required();
        app->add_option("--dataset-bytes", o.dataset_bytes, "Approximate dataset size")->capture_default_str();
        app->add_option("--dataset-seed", o.dataset_seed, "Seed of the dataset generator")->capture_default_str();
        add_finetune_flags(app, o.train);
        app->add_option("--lora-rank", o.lora_rank, "Train rank-r adapters instead of all weights (0 = full)")
            ->capture_default_str();
        app->add_option("--out", o.out, "Output checkpoint")->required();
        add_seed(app, o.seed);
      },
      [this](const FinetuneOpts& o) {
        const Checkpoint base = load(o.base);
        const SftDataset ds = corpus::instruction_dataset(corpus::dataset_index(o.dataset), o.dataset_bytes,
                                                          o.dataset_seed);
        TrainConfig tc = o.train;
        tc.seed = o.seed;
        const Checkpoint ft = o.lora_rank > 0 ? lora_finetune(base, ds, o.lora_rank, tc) : sft_finetune(base, ds, tc);
        save(ft, o.out);
        out_ << "checkpoint\t" << o.out << "\ndataset_nll_before\t" << fmt("%.4f", dataset_nll(base, ds))
             << "\ndataset_nll_after\t" << fmt("%.4f", dataset_nll(ft, ds)) << '\n';
      });

  command<QuantOpts>(
      &app_, "quantize", "Round a checkpoint's weights to a lower precision",
      [](CLI::App* app, QuantOpts& o) {
        app->add_option("--in", o.in, "Input checkpoint")->required();
        app->add_option("--bits", o.bits, "16, 8 or 4")->check(CLI::IsMember({16, 8, 4}))->capture_default_str();
        app->add_option("--out", o.out, "Output checkpoint")->required();
      },
      [this](const QuantOpts& o) {
        save(quantize(load(o.in), o.bits), o.out);
        out_ << "checkpoint\t" << o.out << '\n';
      });
}

// ---- lineage ----------------------------------------------------------------

struct LineageOpts {
  std::string base;
  std::string datasets;
  std::string out;
  std::size_t dataset_bytes = 20000;
  std::string quant;
  SuiteRecipe recipe;
  std::uint64_t seed = 0;
};

void Cli::build_lineage() {
  CLI::App* lineage = app_.add_subcommand("lineage", "Build suites of adapted models");
  lineage->require_subcommand(1);
  command<LineageOpts>(
      lineage, "build", "Finetune, LoRA-adapt and quantize a base model; writes checkpoints and manifest.tsv",
      [](CLI::App* app, LineageOpts& o) {
        app->add_option("--base", o.base, "Base checkpoint")->required();
        app->add_option("--datasets", o.datasets, "Comma-separated dataset names or indices")->required();
        app->add_option("--out", o.out, "Output directory")->required();
        app->add_option("--dataset-bytes", o.dataset_bytes, "Approximate size of each dataset")->capture_default_str();
        app->add_option("--quant", o.quant, "Comma-separated quantization widths, e.g. 16,8,4");
        app->add_option("--lora-rank", o.recipe.lora_rank, "LoRA rank (0 disables LoRA derivatives)")
            ->capture_default_str();
        app->add_option("--epochs", o.recipe.sft.epochs, "Finetuning epochs")->capture_default_str();
        app->add_option("--lr", o.recipe.sft.learning_rate, "Full finetuning learning rate")->capture_default_str();
        app->add_option("--lora-lr", o.recipe.lora.learning_rate, "LoRA learning rate")->capture_default_str();
        add_seed(app, o.seed);
      },
      [this](const LineageOpts& o) {
        std::vector<NamedDataset> datasets;
        for (const auto& name : split_list(o.datasets)) {
          const std::uint32_t idx = corpus::dataset_index(name);
          datasets.push_back({corpus::dataset_name(idx), corpus::instruction_dataset(idx, o.dataset_bytes)});
        }
        SuiteRecipe recipe = o.recipe;
        recipe.sft.seed = recipe.lora.seed = o.seed;
        recipe.lora.epochs = recipe.sft.epochs;
        for (const auto& b : split_list(o.quant)) recipe.quant_bits.push_back(static_cast<std::uint32_t>(std::stoul(b)));
        const LineageRegistry reg = build_suite(load(o.base), datasets, recipe);
        out_ << "manifest\t" << save_registry(reg, o.out).string() << '\n';
      });
}

// ---- fp -------------------------------------------------------------------

struct FpGenOpts {
  std::string model;
  GcgFlags gcg;
  std::uint32_t count = 1;
  std::uint64_t seed = 0;
  std::string out;
};

struct FpVerifyOpts {
  std::string model;
  std::string fps;
  DecodeFlags decode;
  std::string system;
  std::uint64_t seed = 0;
  std::string out;
};

void Cli::build_fp() {
  CLI::App* fp = app_.add_subcommand("fp", "Generate and verify fingerprints");
  fp->require_subcommand(1);
  command<FpGenOpts>(
      fp, "gen", "Generate fingerprints for a base model (optionally jointly with derivatives)",
      [](CLI::App* app, FpGenOpts& o) {
        app->add_option("--model", o.model, "Base checkpoint")->required();
        o.gcg.add(app);
        app->add_option("--count", o.count, "Fingerprints to generate; the i-th uses seed + i")
            ->capture_default_str();
        app->add_option("--out", o.out, "Output fingerprint file")->required();
        add_seed(app, o.seed);
      },
      [this](const FpGenOpts& o) {
        const TaskSet ts = o.gcg.task_set(o.model);
        std::vector<Fingerprint> fps;
        for (std::uint32_t i = 0; i < o.count; ++i) {
          GcgConfig cfg = o.gcg.cfg;
          cfg.seed = o.seed + i;
          fps.push_back(generate_fingerprint(ts, cfg));
          out_ << "fingerprint\t" << i << "\tseed=" << cfg.seed << "\ttrials=" << fps.back().meta.trials
               << "\tloss=" << fmt("%.4f", fps.back().meta.loss) << '\n';
        }
        save_fingerprints(fps, o.out);
      });

  command<FpVerifyOpts>(
      fp, "verify", "Query a checkpoint-backed oracle with fingerprints and report TPR as CSV",
      [](CLI::App* app, FpVerifyOpts& o) {
        app->add_option("--model", o.model, "Checkpoint under test")->required();
        app->add_option("--fps", o.fps, "Fingerprint file")->required();
        o.decode.add(app);
        app->add_option("--system", o.system, "Replace each fingerprint's system prompt with this named prompt");
        app->add_option("--out", o.out, "CSV report path (default: stdout)");
        add_seed(app, o.seed);
      },
      [this](const FpVerifyOpts& o) {
        CheckpointOracle oracle(load_model(o.model));
        std::vector<Fingerprint> fps = load_fingerprints(o.fps);
        if (!o.system.empty()) fps = with_system_prompt(fps, system_prompt(o.system));
        emit(o.out, to_csv(tpr(oracle, fps, o.decode.params(o.seed))), out_);
      });
}

// ---- ledger -----------------------------------------------------------------

struct CommitOpts {
  std::string fp;
  std::size_t index = 0;
  std::string salt_out;
  std::uint64_t seed = 0;
  bool seeded = false;
};

struct AppendOpts {
  std::string ledger;
  std::string digest;
  std::string claimant;
};

struct OpenOpts {
  std::string ledger;
  std::uint64_t seq = 0;
  std::string fp;
  std::size_t index = 0;
  std::string salt;
};

struct ResolveOpts {
  std::string ledger;
  std::string target;
  std::string claims;
};

Fingerprint pick(const std::string& path, std::size_t index) {
  const auto fps = load_fingerprints(path);
  if (index >= fps.size()) {
    throw InvalidArgument("fingerprint index " + std::to_string(index) + " out of range (file has " +
                          std::to_string(fps.size()) + ")");
  }
  return fps[index];
}

// Claims file: "<seq>\t<fingerprint file>[:<index>]\t<salt file>" per line;
// relative paths resolve against the claims file's directory.
std::vector<Claim> load_claims(const std::string& path) {
  const std::filesystem::path dir = std::filesystem::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return (fp.is_absolute() ? fp : dir / fp).string();
  };
  std::vector<Claim> claims;
  std::stringstream ss(read_text(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ls(line);
    std::string f;
    while (std::getline(ls, f, '\t')) fields.push_back(f);
    if (fields.size() != 3) throw FormatError("claims line " + std::to_string(line_no) + ": expected 3 fields");
    Claim c;
    c.seq = std::stoull(fields[0]);
    std::string fp_path = fields[1];
    std::size_t index = 0;
    if (const auto colon = fp_path.rfind(':'); colon != std::string::npos) {
      index = std::stoul(fp_path.substr(colon + 1));
      fp_path.resize(colon);
    }
    c.fp = pick(resolve(fp_path), index);
    c.salt = load_salt(resolve(fields[2]));
    claims.push_back(std::move(c));
  }
  return claims;
}

void Cli::build_ledger() {
  CLI::App* ledger = app_.add_subcommand("ledger", "Commitments and the append-only ownership ledger");
  ledger->require_subcommand(1);

  command<CommitOpts>(
      ledger, "commit", "Salt and hash a fingerprint; prints the digest and writes the salt file",
      [](CLI::App* app, CommitOpts& o) {
        app->add_option("--fp", o.fp, "Fingerprint file")->required();
        app->add_option("--index", o.index, "Record within the file")->capture_default_str();
        app->add_option("--salt-out", o.salt_out, "Where to write the secret salt")->required();
        app->add_option("--seed", o.seed, "Derive the salt from a seed (reproducible, not secret); default is "
                                          "the system CSPRNG unless $ROFL_SEED is set")
            ->envname("ROFL_SEED");
      },
      [this](const CommitOpts& o) {
        const Fingerprint fp = pick(o.fp, o.index);
        const bool seeded = std::getenv("ROFL_SEED") != nullptr || o.seed != 0;
        const Salt salt = seeded ? seeded_salt(o.seed) : random_salt();
        const Commitment c = commit(fp, salt);
        save_salt(c.salt, o.salt_out);
        out_ << to_hex(c.digest) << '\n';
      });

  command<AppendOpts>(
      ledger, "append", "Append a digest to the ledger; prints the new record",
      [](CLI::App* app, AppendOpts& o) {
        app->add_option("--ledger", o.ledger, "Ledger file (created if missing)")->required();
        app->add_option("--digest", o.digest, "64-character hex digest")->required();
        app->add_option("--claimant", o.claimant, "Printable ASCII label")->required();
      },
      [this](const AppendOpts& o) {
        Ledger l(o.ledger);
        out_ << format_record(l.append(digest_from_hex(o.digest), o.claimant));
      });

  command<OpenOpts>(
      ledger, "open", "Check that a revealed fingerprint and salt open a ledger record (exit 1 if not)",
      [](CLI::App* app, OpenOpts& o) {
        app->add_option("--ledger", o.ledger, "Ledger file")->required();
        app->add_option("--seq", o.seq, "Record sequence number")->required();
        app->add_option("--fp", o.fp, "Fingerprint file")->required();
        app->add_option("--index", o.index, "Record within the fingerprint file")->capture_default_str();
        app->add_option("--salt", o.salt, "Salt file")->required();
      },
      [this](const OpenOpts& o) {
        const Ledger l(o.ledger);
        const LedgerRecord* r = l.find(o.seq);
        if (r == nullptr) throw InvalidArgument("ledger has no record " + std::to_string(o.seq));
        const bool ok = open_commitment(*r, pick(o.fp, o.index), load_salt(o.salt));
        out_ << "open\t" << (ok ? "true" : "false") << '\n';
        if (!ok) throw Failed{"commitment does not open"};
      });

  command<ResolveOpts>(
      ledger, "resolve", "Decide a fingerprint race: earliest valid, verifying claim wins",
      [](CLI::App* app, ResolveOpts& o) {
        app->add_option("--ledger", o.ledger, "Ledger file")->required();
        app->add_option("--target", o.target, "Checkpoint of the disputed model")->required();
        app->add_option("--claims", o.claims,
                        "Claims file: lines '<seq>\\t<fingerprint file>[:<index>]\\t<salt file>'")
            ->required();
      },
      [this](const ResolveOpts& o) {
        const Ledger l(o.ledger);
        CheckpointOracle oracle(load_model(o.target));
        const auto claims = load_claims(o.claims);
        const RaceOutcome r = resolve_race(l, claims, oracle);
        out_ << "seq,in_ledger,opens,verifies\n";
        for (const auto& c : r.checks) {
          out_ << c.seq << ',' << (c.in_ledger ? "true" : "false") << ',' << (c.opens ? "true" : "false") << ','
               << (c.verifies ? "true" : "false") << '\n';
        }
        if (r.winner) {
          out_ << "winner," << r.winner->seq << ',' << r.winner->claimant << '\n';
        } else {
          out_ << "winner,none\n";
        }
      });
}

// ---- attacks ----------------------------------------------------------------

struct FrontRunOpts {
  std::string lengths = "8,16,32,54";
  std::uint32_t seeds = 3;
  FrontRunConfig cfg;
  std::uint32_t slice = 0;
  std::size_t corpus_bytes = 100000;
  std::string trace_dir;
  std::uint64_t seed = 0;
  std::string out;
};

struct DensityOpts {
  std::string model;
  GcgFlags gcg;
  std::uint32_t count = 50;
  std::string fps_out;
  std::string out;
};

struct PplOpts {
  std::string model;
  std::string fps;
  std::string natural;
  std::uint32_t natural_count = 100;
  std::string thresholds = "10,20,50,100,200,500,1000";
  std::uint64_t seed = 0;
  std::string out;
};

struct ForgeryOpts {
  std::uint64_t domain = 2000;
  std::uint64_t ylen = 9;
  std::string model;
  std::uint32_t spray = 0;
  std::uint32_t xlen = 32;
  std::uint64_t seed = 0;
};

struct FilterOpts {
  std::string model;
  std::string fps;
  std::string variants = "basic,basic+filter1,basic+filter2";
  DecodeFlags decode;
  std::uint64_t seed = 0;
  std::string out;
};

FrontRunConfig default_front_run() {
  FrontRunConfig c;
  c.model.d_model = 64;
  c.model.n_layers = 2;
  c.model.n_heads = 4;
  c.model.ctx_len = 128;
  c.train.batch_size = 1;
  c.train.learning_rate = 3e-3;
  c.train.warmup_steps = 20;
  c.budget = 1500;
  c.eval_every = 10;
  return c;
}

void Cli::build_attack() {
  CLI::App* attack = app_.add_subcommand("attack", "Attack simulations and their CSV reports");
  attack->require_subcommand(1);

  command<FrontRunOpts>(
      attack, "frontrun", "Poison training from scratch and count steps until a fixed pair verifies",
      [](CLI::App* app, FrontRunOpts& o) {
        o.cfg = default_front_run();
        app->add_option("--len", o.lengths, "Comma-separated fingerprint lengths |x|+|y|")->capture_default_str();
        app->add_option("--seeds", o.seeds, "Runs per length (pair and training seeds seed..seed+n-1)")
            ->capture_default_str();
        app->add_option("--budget", o.cfg.budget, "Optimizer step budget")->capture_default_str();
        app->add_option("--eval-every", o.cfg.eval_every, "Steps between verification checks")
            ->capture_default_str();
        app->add_option("--injections", o.cfg.injections, "Poison copies per step")->capture_default_str();
        app->add_option("--d-model", o.cfg.model.d_model, "Embedding width")->capture_default_str();
        app->add_option("--layers", o.cfg.model.n_layers, "Transformer blocks")->capture_default_str();
        app->add_option("--heads", o.cfg.model.n_heads, "Attention heads")->capture_default_str();
        app->add_option("--ctx", o.cfg.model.ctx_len, "Context length")->capture_default_str();
        app->add_option("--lr", o.cfg.train.learning_rate, "Peak learning rate")->capture_default_str();
        app->add_option("--batch", o.cfg.train.batch_size, "Clean windows per step")->capture_default_str();
        app->add_option("--corpus-slice", o.slice, "Bundled corpus slice")->capture_default_str();
        app->add_option("--corpus-bytes", o.corpus_bytes, "Clean corpus size")->capture_default_str();
        app->add_option("--trace-dir", o.trace_dir, "Write per-run step,verified traces here");
        app->add_option("--out", o.out, "Summary CSV (default: stdout)");
        add_seed(app, o.seed);
      },
      [this](const FrontRunOpts& o) {
        const std::string text = corpus::text_slice(o.slice, o.corpus_bytes);
        std::string csv = "length,seed,steps,complete,stable\n";
        if (!o.trace_dir.empty()) std::filesystem::create_directories(o.trace_dir);
        for (const auto& len : split_list(o.lengths)) {
          const std::size_t length = std::stoul(len);
          for (std::uint32_t s = 0; s < o.seeds; ++s) {
            FrontRunConfig cfg = o.cfg;
            cfg.model.seed = cfg.train.seed = o.seed + s;
            const auto [x, y] = random_poison_pair(length, o.seed + s);
            const FrontRunResult r = front_run(cfg, text, x, y);
            csv += std::to_string(length) + ',' + std::to_string(o.seed + s) + ',' + std::to_string(r.steps) + ',' +
                   (r.complete ? "true" : "false") + ',' + (r.stable ? "true" : "false") + '\n';
            if (!o.trace_dir.empty()) {
              emit((std::filesystem::path(o.trace_dir) /
                    ("trace_len" + std::to_string(length) + "_seed" + std::to_string(o.seed + s) + ".csv"))
                       .string(),
                   trace_csv(r), out_);
            }
          }
        }
        emit(o.out, csv, out_);
      });

  command<DensityOpts>(
      attack, "density", "Generate fingerprints with seeds 0..count-1 and count distinct results",
      [](CLI::App* app, DensityOpts& o) {
        app->add_option("--model", o.model, "Base checkpoint")->required();
        o.gcg.add(app);
        app->add_option("--count", o.count, "Generations")->capture_default_str();
        app->add_option("--fps-out", o.fps_out, "Also save the generated fingerprints");
        app->add_option("--out", o.out, "CSV report (default: stdout)");
      },
      [this](const DensityOpts& o) {
        const DensityResult r = density_probe(o.gcg.task_set(o.model), o.gcg.cfg, o.count);
        std::string csv = "seed,status\n";
        for (std::uint64_t s = 0; s < o.count; ++s) {
          const bool failed = std::find(r.failed_seeds.begin(), r.failed_seeds.end(), s) != r.failed_seeds.end();
          csv += std::to_string(s) + (failed ? ",failed\n" : ",ok\n");
        }
        csv += "distinct," + std::to_string(r.distinct) + "\nsuccess_rate," + fmt("%.4f", r.success_rate) + '\n';
        if (!o.fps_out.empty()) save_fingerprints(r.fingerprints, o.fps_out);
        emit(o.out, csv, out_);
      });

  command<PplOpts>(
      attack, "ppl", "Compare prompt perplexity of fingerprints and natural text",
      [](CLI::App* app, PplOpts& o) {
        app->add_option("--model", o.model, "Checkpoint used to score perplexity")->required();
        app->add_option("--fps", o.fps, "Fingerprint file")->required();
        app->add_option("--natural", o.natural, "Text file with one natural prompt per line "
                                                "(default: sentences from the bundled corpus)");
        app->add_option("--natural-count", o.natural_count, "Bundled natural prompts when --natural is absent")
            ->capture_default_str();
        app->add_option("--thresholds", o.thresholds, "Comma-separated perplexity thresholds")->capture_default_str();
        app->add_option("--out", o.out, "CSV report (default: stdout)");
        add_seed(app, o.seed);
      },
      [this](const PplOpts& o) {
        const Model model(load(o.model));
        std::vector<Tokens> fp_prompts;
        for (const auto& fp : load_fingerprints(o.fps)) fp_prompts.push_back(fp.prompt);
        std::vector<Tokens> natural;
        if (o.natural.empty()) {
          for (const auto& s : corpus::natural_prompts(o.natural_count, o.seed)) natural.push_back(tokenize(s));
        } else {
          std::stringstream ss(read_text(o.natural));
          std::string line;
          while (std::getline(ss, line)) {
            if (line.size() >= 2) natural.push_back(tokenize(line));
          }
        }
        std::vector<double> thresholds;
        for (const auto& t : split_list(o.thresholds)) thresholds.push_back(std::stod(t));
        emit(o.out, to_csv(ppl_filter(model, fp_prompts, natural, thresholds)), out_);
      });

  command<ForgeryOpts>(
      attack, "forgery", "Probability that a guessed response matches, optionally with a spray test",
      [](CLI::App* app, ForgeryOpts& o) {
        app->add_option("--D", o.domain, "Domain size of each response token")->capture_default_str();
        app->add_option("--ylen", o.ylen, "Response length")->capture_default_str();
        app->add_option("--model", o.model, "Checkpoint to spray random pairs at");
        app->add_option("--spray", o.spray, "Random (x, y) pairs to verify against --model")->capture_default_str();
        app->add_option("--xlen", o.xlen, "Prompt length of sprayed pairs")->capture_default_str();
        add_seed(app, o.seed);
      },
      [this](const ForgeryOpts& o) {
        out_ << fmt("%.3e", forgery_probability(o.domain, o.ylen)) << '\n';
        if (o.spray > 0) {
          if (o.model.empty()) throw InvalidArgument("--spray needs --model");
          CheckpointOracle oracle(load_model(o.model));
          out_ << "spray_matches\t" << spray_simulation(oracle, o.spray, o.xlen, o.ylen, o.seed) << '/' << o.spray
               << '\n';
        }
      });

  command<FilterOpts>(
      attack, "filter", "TPR with filtering system prompts substituted at query time",
      [](CLI::App* app, FilterOpts& o) {
        app->add_option("--model", o.model, "Checkpoint under test")->required();
        app->add_option("--fps", o.fps, "Fingerprint file")->required();
        app->add_option("--variants", o.variants, "Comma-separated system prompt names")->capture_default_str();
        o.decode.add(app);
        app->add_option("--out", o.out, "CSV report (default: stdout)");
        add_seed(app, o.seed);
      },
      [this](const FilterOpts& o) {
        CheckpointOracle oracle(load_model(o.model));
        const auto fps = load_fingerprints(o.fps);
        std::string csv = "variant,tpr\n";
        for (const auto& v : filter_prompt_eval(oracle, fps, split_list(o.variants), o.decode.params(o.seed))) {
          csv += v.variant + ',' + fmt("%.4f", v.tpr) + '\n';
        }
        emit(o.out, csv, out_);
      });
}

// ---- report -------------------------------------------------------------------

struct MergeOpts {
  std::vector<std::string> inputs;
  std::string out;
};

void Cli::build_report() {
  CLI::App* report = app_.add_subcommand("report", "Combine CSV reports");
  report->require_subcommand(1);
  command<MergeOpts>(
      report, "merge", "Concatenate CSV reports that share a header, adding a leading source column",
      [](CLI::App* app, MergeOpts& o) {
        app->add_option("--in", o.inputs, "Input CSV files (repeatable or comma-separated)")
            ->required()
            ->delimiter(',');
        app->add_option("--out", o.out, "Merged CSV (default: stdout)");
      },
      [this](const MergeOpts& o) {
        std::string header;
        std::string body;
        for (const auto& path : o.inputs) {
          std::stringstream ss(read_text(path));
          std::string line;
          if (!std::getline(ss, line)) throw FormatError(path + " is empty");
          if (header.empty()) {
            header = line;
          } else if (line != header) {
            throw FormatError(path + " has a different header");
          }
          const std::string source = std::filesystem::path(path).stem().string();
          while (std::getline(ss, line)) {
            if (!line.empty()) body += source + ',' + line + '\n';
          }
        }
        emit(o.out, "source," + header + '\n' + body, out_);
      });
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Cli cli(out, err);
  return cli.run(args);
}

}  // namespace rofl::cli

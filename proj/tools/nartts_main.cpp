// Copyright (c) 2026 nartts authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line front end: corpus generation, two-phase training, duration
// extraction, synthesis, gradient auditing, decoder benchmarking.
//
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
// failure. Stdout is line-oriented key=value. Seeded subcommands produce
// identical stdout and identical output files run to run.

#include <chrono>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "nartts/corpus.hpp"
#include "nartts/gradcheck_suites.hpp"
#include "nartts/io.hpp"
#include "nartts/model.hpp"
#include "nartts/training.hpp"

namespace fs = std::filesystem;
using namespace nartts;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

ConfigMap load_config_overrides(const std::string& path) {
  if (path.empty()) return {};
  return parse_config_text(io_detail::read_file(path, "config file"));
}

std::vector<int> parse_token_list(const std::string& text) {
  std::istringstream is(text);
  std::vector<int> tokens;
  std::string tok;
  while (is >> tok) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || v < 0) throw ParseError("bad token id '" + tok + "'");
    tokens.push_back(v);
  }
  if (tokens.empty()) throw ParseError("empty token list");
  return tokens;
}

std::string format_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << v[i];
  return os.str();
}

// ---------------------------------------------------------------------------

struct GenCorpusArgs {
  std::string out;
  CorpusSpec spec;
};

int cmd_gen_corpus(const GenCorpusArgs& args) {
  args.spec.validate();
  fs::create_directories(fs::path(args.out) / "feats");
  auto corpus = generate_toy_corpus(args.spec);

  std::vector<ManifestEntry> manifest;
  DurationEntries durations;
  for (const auto& ex : corpus) {
    const std::string rel = "feats/" + ex.id + ".nhdr";
    write_features((fs::path(args.out) / rel).string(), ex.frames);
    manifest.push_back({ex.id, ex.tokens, rel});
    durations.emplace_back(ex.id, ex.true_durations);
  }
  write_manifest((fs::path(args.out) / "manifest.txt").string(), manifest);
  write_durations((fs::path(args.out) / "durations.txt").string(), durations);

  std::cout << "utterances=" << corpus.size() << "\n";
  std::cout << "manifest=" << (fs::path(args.out) / "manifest.txt").string() << "\n";
  std::cout << "durations=" << (fs::path(args.out) / "durations.txt").string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string manifest, durations, out, log, config;
  TrainConfig train;
  int vocab = 16;
  bool no_fusion = false;
  bool autoregressive = false;
};

int cmd_train(const TrainArgs& args) {
  if (args.durations.empty()) {
    std::cerr << "error: main training needs target durations; pass --durations PATH "
                 "(the corpus ground truth from gen-corpus, or the output of "
                 "extract-durations)\n";
    return kExitUsage;
  }
  ModelConfig mc = model_config_from_map(load_config_overrides(args.config));
  mc.seed = args.train.seed;
  mc.encoder.vocab_size = args.vocab;
  if (args.no_fusion) mc.encoder.fusion_enabled = false;
  if (args.autoregressive) mc.decoder.mode = DecoderMode::kAutoregressive;

  auto data = load_utterances(args.manifest, args.durations);
  AcousticModel model(mc);
  std::cout << "parameters=" << model.parameter_count() << "\n";

  TrainLogWriter log(args.log);
  const int every = args.train.log_every;
  auto records = train_main(model, data, args.train, &log, [every](const TrainRecord& r) {
    if (r.step % every == 0 || r.step == 1) {
      std::cout << "step=" << r.step << " total=" << r.total << " l1_before=" << r.l1_before
                << " l1_after=" << r.l1_after << " l1_dur=" << r.l1_dur << "\n";
    }
  });

  EvalMetrics metrics = evaluate(model, data);
  std::cout << "final_l1_before=" << metrics.l1_before << "\n";
  std::cout << "final_l1_after=" << metrics.l1_after << "\n";
  std::cout << "final_dur_mae=" << metrics.dur_mae << "\n";
  std::cout << "final_length_err=" << metrics.length_err << "\n";

  if (!args.out.empty()) {
    save_checkpoint(args.out, model.parameters(), model_config_to_map(model.config()));
    std::cout << "checkpoint=" << args.out << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainExtractorArgs {
  std::string manifest, out, log, config;
  TrainConfig train;
  int vocab = 16;
};

int cmd_train_extractor(const TrainExtractorArgs& args) {
  ExtractorConfig xc = extractor_config_from_map(load_config_overrides(args.config));
  xc.seed = args.train.seed;
  xc.encoder.vocab_size = args.vocab;

  auto data = load_utterances(args.manifest);
  RngStream init(xc.seed, RngStream::Stream::kParams);
  DurationExtractor extractor(xc, init);
  RngStream drop(xc.seed, RngStream::Stream::kDropout);

  TrainLogWriter log(args.log);
  auto result = train_extractor(extractor, data, args.train, drop, &log,
                                [](const TrainRecord& r, double entropy, double mono) {
                                  std::cout << "step=" << r.step << " total=" << r.total
                                            << " l1_before=" << r.l1_before
                                            << " l1_after=" << r.l1_after
                                            << " align_entropy=" << entropy
                                            << " monotonic_rate=" << mono << "\n";
                                });
  std::cout << "stopped_at=" << result.stopped_at << "\n";
  std::cout << "best_loss=" << result.best_loss << "\n";

  if (!args.out.empty()) {
    save_checkpoint(args.out, extractor.parameters(), extractor_config_to_map(xc));
    std::cout << "checkpoint=" << args.out << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct ExtractArgs {
  std::string manifest, checkpoint, out;
  int jobs = 1;
};

int cmd_extract_durations(const ExtractArgs& args) {
  Checkpoint ck = load_checkpoint(args.checkpoint);
  if (cfg::get_str(ck.config, "kind", "") != "extractor")
    throw FormatError("checkpoint is not an extractor checkpoint");
  ExtractorConfig xc = extractor_config_from_map(ck.config);
  RngStream init(xc.seed, RngStream::Stream::kParams);
  DurationExtractor extractor(xc, init);
  ParamMap params = extractor.parameters();
  load_into(params, ck);

  auto data = load_utterances(args.manifest);
  std::vector<std::vector<int>> results(data.size());
  const int jobs = std::max(1, args.jobs);

  // Extraction is read-only on the model; utterances shard across threads.
  auto worker = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i)
      results[i] = extractor.extract_durations(data[i].tokens, data[i].frames).frames;
  };
  if (jobs == 1) {
    worker(0, data.size());
  } else {
    std::vector<std::thread> threads;
    const std::size_t chunk = (data.size() + jobs - 1) / jobs;
    for (int j = 0; j < jobs; ++j) {
      const std::size_t b = std::min(data.size(), static_cast<std::size_t>(j) * chunk);
      const std::size_t e = std::min(data.size(), b + chunk);
      if (b < e) threads.emplace_back(worker, b, e);
    }
    for (auto& t : threads) t.join();
  }

  DurationEntries entries;
  for (std::size_t i = 0; i < data.size(); ++i) entries.emplace_back(data[i].id, results[i]);
  write_durations(args.out, entries);
  std::cout << "utterances=" << entries.size() << "\n";
  std::cout << "durations=" << args.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string checkpoint, tokens_text, manifest, id, out;
};

int cmd_synth(const SynthArgs& args) {
  Checkpoint ck = load_checkpoint(args.checkpoint);
  if (cfg::get_str(ck.config, "kind", "") != "acoustic")
    throw FormatError("checkpoint is not an acoustic-model checkpoint");
  AcousticModel model(model_config_from_map(ck.config));
  ParamMap params = model.parameters();
  load_into(params, ck);

  std::vector<int> tokens;
  if (!args.tokens_text.empty()) {
    tokens = parse_token_list(args.tokens_text);
  } else {
    if (args.manifest.empty() || args.id.empty())
      throw ConfigError("synth: pass --tokens or both --manifest and --id");
    for (const auto& e : read_manifest(args.manifest)) {
      if (e.id == args.id) {
        tokens = e.tokens;
        break;
      }
    }
    if (tokens.empty()) throw ContractError("synth: utterance " + args.id + " not in manifest");
  }

  auto synth = model.synthesize(tokens);
  write_features(args.out, synth.after);
  std::cout << "tokens=" << format_ints(tokens) << "\n";
  std::cout << "durations=" << format_ints(synth.frames) << "\n";
  std::cout << "frames=" << std::accumulate(synth.frames.begin(), synth.frames.end(), 0) << "\n";
  std::cout << "out=" << args.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
  std::string module = "all";
  double tol = 1e-4;
  std::uint64_t seed = 1;
  bool inject_fault = false;
};

int cmd_gradcheck(const GradcheckArgs& args) {
  testing_hooks::corrupt_matmul_backward = args.inject_fault;
  double worst = 0.0;
  for (const ModuleReport& rep : run_gradcheck_suites(args.module, args.seed)) {
    for (const GroupReport& g : rep.groups) {
      std::cout << "module=" << rep.module << " group=" << g.group
                << " max_rel_err=" << g.max_rel_err << "\n";
      worst = std::max(worst, g.max_rel_err);
    }
  }
  testing_hooks::corrupt_matmul_backward = false;
  std::cout << "worst=" << worst << " tol=" << args.tol
            << " status=" << (worst <= args.tol ? "pass" : "fail") << "\n";
  return worst <= args.tol ? kExitOk : kExitNumeric;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  int frames = 512;
  int repeat = 20;
  std::uint64_t seed = 1;
};

int cmd_bench_decoder(const BenchArgs& args) {
  if (args.repeat < 1) throw ConfigError("bench-decoder: --repeat must be >= 1");
  if (args.frames < 1) throw ConfigError("bench-decoder: --frames must be >= 1");

  RngStream init(args.seed, RngStream::Stream::kParams);
  DecoderConfig nar_cfg;  // full-size: 512-unit recurrence over 256-dim input
  AcousticDecoder nar(nar_cfg, init);
  DecoderConfig ar_cfg = nar_cfg;
  ar_cfg.mode = DecoderMode::kAutoregressive;
  AcousticDecoder ar(ar_cfg, init);

  RngStream data(args.seed, RngStream::Stream::kData);
  std::vector<double> ev(static_cast<std::size_t>(args.frames) * nar_cfg.d_model);
  for (double& v : ev) v = data.uniform(-1.0, 1.0);
  Tensor expanded = Tensor::from({args.frames, nar_cfg.d_model}, std::move(ev));
  RngStream drop(args.seed, RngStream::Stream::kDropout);

  auto time_ms = [](const std::function<void()>& fn, int repeat) {
    fn();  // warmup
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < repeat; ++i) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / repeat;
  };

  Tensor nar_out, ar_out;
  const double nar_ms = time_ms([&] { nar_out = nar.decode(expanded); }, args.repeat);
  const double ar_ms = time_ms(
      [&] { ar_out = ar.decode_autoregressive(expanded, std::nullopt, drop, false); },
      args.repeat);

  std::cout << "frames=" << args.frames << " repeat=" << args.repeat << "\n";
  std::cout << "nar_shape=" << nar_out.dim(0) << "x" << nar_out.dim(1) << "\n";
  std::cout << "ar_shape=" << ar_out.dim(0) << "x" << ar_out.dim(1) << "\n";
  std::cout << "nar_ms=" << nar_ms << "\n";
  std::cout << "ar_ms=" << ar_ms << "\n";
  std::cout << "ratio=" << ar_ms / nar_ms << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"non-attentive non-autoregressive TTS acoustic model (desk scale)"};
  app.require_subcommand(1);

  GenCorpusArgs gen;
  auto* sc_gen = app.add_subcommand("gen-corpus", "generate the synthetic corpus");
  sc_gen->add_option("--out", gen.out, "output directory")->required();
  sc_gen->add_option("--vocab", gen.spec.vocab_size, "vocabulary size");
  sc_gen->add_option("--utts", gen.spec.n_utterances, "number of utterances");
  sc_gen->add_option("--min-tokens", gen.spec.min_tokens, "minimum tokens per utterance");
  sc_gen->add_option("--max-tokens", gen.spec.max_tokens, "maximum tokens per utterance");
  sc_gen->add_option("--noise", gen.spec.noise_sigma, "frame noise sigma");
  sc_gen->add_option("--seed", gen.spec.seed, "corpus seed");

  TrainArgs tr;
  tr.train.batch_size = 8;
  tr.train.max_steps = 2000;
  tr.train.lr = 1e-3;
  auto* sc_train = app.add_subcommand("train", "train the acoustic model");
  sc_train->add_option("--manifest", tr.manifest, "corpus manifest")->required();
  sc_train->add_option("--durations", tr.durations, "target duration file");
  sc_train->add_option("--out", tr.out, "checkpoint output path");
  sc_train->add_option("--log", tr.log, "training log path");
  sc_train->add_option("--config", tr.config, "config overrides (key=value text)");
  sc_train->add_option("--steps", tr.train.max_steps, "training steps");
  sc_train->add_option("--batch", tr.train.batch_size, "batch size");
  sc_train->add_option("--lr", tr.train.lr, "learning rate");
  sc_train->add_option("--seed", tr.train.seed, "training seed");
  sc_train->add_option("--vocab", tr.vocab, "vocabulary size");
  sc_train->add_option("--log-every", tr.train.log_every, "stdout logging period");
  sc_train->add_flag("--no-fusion", tr.no_fusion, "disable coarse+fine feature fusion");
  sc_train->add_flag("--autoregressive", tr.autoregressive, "autoregressive decoder ablation");

  TrainExtractorArgs tx;
  tx.train.batch_size = 8;
  tx.train.max_steps = 4000;
  tx.train.lr = 1e-3;
  tx.train.grad_clip = 5.0;
  tx.train.plateau_steps = 500;
  auto* sc_trainx = app.add_subcommand("train-extractor", "train the duration extractor");
  sc_trainx->add_option("--manifest", tx.manifest, "corpus manifest")->required();
  sc_trainx->add_option("--out", tx.out, "checkpoint output path");
  sc_trainx->add_option("--log", tx.log, "training log path");
  sc_trainx->add_option("--config", tx.config, "config overrides (key=value text)");
  sc_trainx->add_option("--steps", tx.train.max_steps, "max training steps");
  sc_trainx->add_option("--batch", tx.train.batch_size, "batch size");
  sc_trainx->add_option("--lr", tx.train.lr, "learning rate");
  sc_trainx->add_option("--seed", tx.train.seed, "training seed");
  sc_trainx->add_option("--vocab", tx.vocab, "vocabulary size");
  sc_trainx->add_option("--plateau", tx.train.plateau_steps, "early stop patience (steps)");
  sc_trainx->add_option("--log-every", tx.train.log_every, "stdout logging period");

  ExtractArgs ex;
  auto* sc_extract = app.add_subcommand("extract-durations", "extract durations in GTA mode");
  sc_extract->add_option("--manifest", ex.manifest, "corpus manifest")->required();
  sc_extract->add_option("--checkpoint", ex.checkpoint, "extractor checkpoint")->required();
  sc_extract->add_option("--out", ex.out, "duration file output path")->required();
  sc_extract->add_option("--jobs", ex.jobs, "parallel workers");

  SynthArgs sy;
  auto* sc_synth = app.add_subcommand("synth", "synthesize features from token ids");
  sc_synth->add_option("--checkpoint", sy.checkpoint, "acoustic checkpoint")->required();
  sc_synth->add_option("--tokens", sy.tokens_text, "space-separated token ids");
  sc_synth->add_option("--manifest", sy.manifest, "manifest to look up --id in");
  sc_synth->add_option("--id", sy.id, "utterance id from the manifest");
  sc_synth->add_option("--out", sy.out, "output feature file")->required();

  GradcheckArgs gc;
  auto* sc_grad = app.add_subcommand("gradcheck", "finite-difference audit of all gradients");
  sc_grad->add_option("--module", gc.module, "all|encoder|duration|decoder|postnet");
  sc_grad->add_option("--tol", gc.tol, "max relative error tolerance");
  sc_grad->add_option("--seed", gc.seed, "seed for the audited instances");
  sc_grad->add_flag("--inject-fault", gc.inject_fault,
                    "corrupt one backward rule (negative control for testing)");

  BenchArgs be;
  auto* sc_bench = app.add_subcommand("bench-decoder", "time both decoder modes");
  sc_bench->add_option("--frames", be.frames, "expanded sequence length");
  sc_bench->add_option("--repeat", be.repeat, "timed repetitions");
  sc_bench->add_option("--seed", be.seed, "weights/input seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (sc_gen->parsed()) return cmd_gen_corpus(gen);
    if (sc_train->parsed()) return cmd_train(tr);
    if (sc_trainx->parsed()) return cmd_train_extractor(tx);
    if (sc_extract->parsed()) return cmd_extract_durations(ex);
    if (sc_synth->parsed()) return cmd_synth(sy);
    if (sc_grad->parsed()) return cmd_gradcheck(gc);
    if (sc_bench->parsed()) return cmd_bench_decoder(be);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {  // format, parse, vocab, io, contract
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

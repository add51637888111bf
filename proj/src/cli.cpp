#include "pnet/cli.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "pnet/checkpoint.hpp"
#include "pnet/data.hpp"
#include "pnet/generate.hpp"
#include "pnet/gradcheck.hpp"
#include "pnet/ids.hpp"
#include "pnet/metrics.hpp"

namespace pnet {

namespace {

bool file_exists(const std::string& path) {
  std::error_code ec;
  return std::filesystem::exists(path, ec);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

std::string json_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", static_cast<unsigned>(c));
          out += buf;
        } else {
          out += c;
        }
    }
  }
  return out;
}

std::int64_t want_int(const std::string& key, const nlohmann::json& v) {
  if (!v.is_number_integer()) throw UserError("config key \"" + key + "\" must be an integer");
  return v.get<std::int64_t>();
}

double want_num(const std::string& key, const nlohmann::json& v) {
  if (!v.is_number()) throw UserError("config key \"" + key + "\" must be a number");
  return v.get<double>();
}

std::string want_str(const std::string& key, const nlohmann::json& v) {
  if (!v.is_string()) throw UserError("config key \"" + key + "\" must be a string");
  return v.get<std::string>();
}

bool want_bool(const std::string& key, const nlohmann::json& v) {
  if (!v.is_boolean()) throw UserError("config key \"" + key + "\" must be a boolean");
  return v.get<bool>();
}

std::uint64_t want_seed(const std::string& key, const nlohmann::json& v) {
  if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
    throw UserError("config key \"" + key + "\" must be a non-negative integer");
  return v.get<std::uint64_t>();
}

void apply_config_key(RunConfig& rc, const std::string& key, const nlohmann::json& v) {
  ModelConfig& m = rc.model;
  TrainConfig& t = rc.train;
  if (key == "vocab_size") m.vocab_size = want_int(key, v);
  else if (key == "layers_enc") m.layers_enc = static_cast<int>(want_int(key, v));
  else if (key == "layers_dec") m.layers_dec = static_cast<int>(want_int(key, v));
  else if (key == "hidden") m.hidden = want_int(key, v);
  else if (key == "ffn") m.ffn = want_int(key, v);
  else if (key == "heads") m.heads = static_cast<int>(want_int(key, v));
  else if (key == "ngram") m.ngram = static_cast<int>(want_int(key, v));
  else if (key == "gamma") m.gamma = want_num(key, v);
  else if (key == "max_len") m.max_len = want_int(key, v);
  else if (key == "dropout") m.dropout = want_num(key, v);
  else if (key == "num_buckets") m.num_buckets = static_cast<int>(want_int(key, v));
  else if (key == "max_distance") m.max_distance = static_cast<int>(want_int(key, v));
  else if (key == "steps") t.steps = want_int(key, v);
  else if (key == "batch_size") t.batch_size = want_int(key, v);
  else if (key == "warmup") t.warmup = want_int(key, v);
  else if (key == "peak_lr") t.peak_lr = want_num(key, v);
  else if (key == "beta1") t.beta1 = want_num(key, v);
  else if (key == "beta2") t.beta2 = want_num(key, v);
  else if (key == "adam_eps") t.adam_eps = want_num(key, v);
  else if (key == "grad_clip") t.grad_clip = want_num(key, v);
  else if (key == "seed") t.seed = want_seed(key, v);
  else if (key == "checkpoint_interval") t.checkpoint_interval = want_int(key, v);
  else if (key == "log_interval") t.log_interval = want_int(key, v);
  else if (key == "eval_interval") t.eval_interval = want_int(key, v);
  else if (key == "corpus") rc.corpus = want_str(key, v);
  else if (key == "vocab") rc.vocab = want_str(key, v);
  else if (key == "pairs") rc.pairs = want_str(key, v);
  else if (key == "checkpoint") rc.checkpoint = want_str(key, v);
  else if (key == "init_checkpoint") rc.init_checkpoint = want_str(key, v);
  else if (key == "input") rc.input = want_str(key, v);
  else if (key == "output") rc.output = want_str(key, v);
  else if (key == "metrics") rc.metrics = want_str(key, v);
  else if (key == "candidate") rc.candidate = want_str(key, v);
  else if (key == "reference") rc.reference = want_str(key, v);
  else if (key == "max_vocab") rc.max_vocab = want_int(key, v);
  else if (key == "beam") rc.beam = static_cast<int>(want_int(key, v));
  else if (key == "alpha") rc.alpha = want_num(key, v);
  else if (key == "min_len") rc.min_len = want_int(key, v);
  else if (key == "gen_max_len") rc.gen_max_len = want_int(key, v);
  else if (key == "block_trigrams") rc.block_trigrams = want_bool(key, v);
  else if (key == "resume") rc.resume = want_bool(key, v);
  else throw UserError("unknown config key: \"" + key + "\"");
}

// Model/train validation throws std::invalid_argument; at the CLI boundary
// those are the user's numbers, so surface them as UserError (exit 2).
template <typename F>
auto as_user(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw UserError(e.what());
  }
}

Checkpoint load_checkpoint_user(const std::string& path, const char* what) {
  try {
    return load_checkpoint(path);
  } catch (const std::exception& e) {
    throw UserError(std::string(what) + ": cannot load checkpoint " + path + ": " + e.what());
  }
}

LoadedTrainState load_train_state_user(const std::string& path, const char* what) {
  try {
    return load_train_checkpoint(path);
  } catch (const std::exception& e) {
    throw UserError(std::string(what) + ": cannot resume from " + path + ": " + e.what());
  }
}

// Loads the vocab, building (and saving) it from the corpus when the file
// does not exist yet.
Vocab ensure_vocab(const RunConfig& rc, const char* what) {
  if (rc.vocab.empty()) throw UserError(std::string(what) + ": no vocab path configured (--vocab)");
  if (file_exists(rc.vocab)) {
    try {
      return Vocab::load(rc.vocab);
    } catch (const std::exception& e) {
      throw UserError(std::string(what) + ": cannot load vocab " + rc.vocab + ": " + e.what());
    }
  }
  if (rc.corpus.empty() || !file_exists(rc.corpus))
    throw UserError(std::string(what) + ": vocab file not found: " + rc.vocab);
  const auto lines = read_lines(rc.corpus);
  if (lines.empty()) throw UserError(std::string(what) + ": corpus is empty: " + rc.corpus);
  Vocab v = as_user([&] { return Vocab::build(lines, rc.max_vocab); });
  v.save(rc.vocab);
  std::cerr << "built vocab with " << v.size() << " ids at " << rc.vocab << "\n";
  return v;
}

// Derives vocab_size from the vocab file or cross-checks an explicit value.
void resolve_vocab_size(RunConfig& rc, const Vocab& vocab, const char* what) {
  if (rc.model.vocab_size == 0) {
    rc.model.vocab_size = vocab.size();
  } else if (rc.model.vocab_size != vocab.size()) {
    throw UserError(std::string(what) + ": config says vocab_size " +
                    std::to_string(rc.model.vocab_size) + " but the vocab file has " +
                    std::to_string(vocab.size()) + " ids");
  }
}

// Rejects explicitly-set model keys that conflict with a checkpoint's config,
// except the ones listed as overridable.
void reject_model_conflicts(const RunConfig& rc, const ModelConfig& have,
                            std::initializer_list<const char*> overridable, const char* what) {
  auto allowed = [&](const char* k) {
    for (const char* a : overridable)
      if (std::strcmp(a, k) == 0) return true;
    return false;
  };
  auto fail = [&](const char* key, const std::string& want_v, const std::string& have_v) {
    throw UserError(std::string(what) + ": config key \"" + key +
                    "\" conflicts with the checkpoint (config " + want_v + ", checkpoint " +
                    have_v + "); drop the key to keep the checkpoint value");
  };
  auto check_i = [&](const char* key, std::int64_t want_v, std::int64_t have_v) {
    if (rc.is_set(key) && !allowed(key) && want_v != have_v)
      fail(key, std::to_string(want_v), std::to_string(have_v));
  };
  auto check_d = [&](const char* key, double want_v, double have_v) {
    if (rc.is_set(key) && !allowed(key) && want_v != have_v)
      fail(key, fmt_double(want_v), fmt_double(have_v));
  };
  check_i("vocab_size", rc.model.vocab_size, have.vocab_size);
  check_i("layers_enc", rc.model.layers_enc, have.layers_enc);
  check_i("layers_dec", rc.model.layers_dec, have.layers_dec);
  check_i("hidden", rc.model.hidden, have.hidden);
  check_i("ffn", rc.model.ffn, have.ffn);
  check_i("heads", rc.model.heads, have.heads);
  check_i("ngram", rc.model.ngram, have.ngram);
  check_d("gamma", rc.model.gamma, have.gamma);
  check_i("max_len", rc.model.max_len, have.max_len);
  check_d("dropout", rc.model.dropout, have.dropout);
  check_i("num_buckets", rc.model.num_buckets, have.num_buckets);
  check_i("max_distance", rc.model.max_distance, have.max_distance);
}

// Reshuffles once per epoch (epoch seed = mix_seed(seed, epoch)) and hands
// out batch (step-1) % n_batches, so any step is addressable without
// replaying earlier ones — resume just asks for its step.
class BatchCursor {
 public:
  BatchCursor(std::vector<Example> examples, std::int64_t batch_size, std::int64_t max_len,
              std::uint64_t seed)
      : examples_(std::move(examples)), batch_size_(batch_size), max_len_(max_len), seed_(seed) {
    n_batches_ = (static_cast<std::int64_t>(examples_.size()) + batch_size_ - 1) / batch_size_;
  }

  const PaddedBatch& at_step(std::int64_t step) {
    const std::int64_t epoch = (step - 1) / n_batches_;
    if (epoch != epoch_) {
      Rng rng(mix_seed(seed_, static_cast<std::uint64_t>(epoch)));
      batches_ = make_batches(examples_, batch_size_, max_len_, kPadId, rng);
      epoch_ = epoch;
    }
    return batches_[static_cast<std::size_t>((step - 1) % n_batches_)];
  }

 private:
  std::vector<Example> examples_;
  std::int64_t batch_size_;
  std::int64_t max_len_;
  std::uint64_t seed_;
  std::int64_t n_batches_;
  std::int64_t epoch_ = -1;
  std::vector<PaddedBatch> batches_;
};

// Like read_lines but keeps empty lines, so outputs stay line-aligned with
// inputs.
std::vector<std::string> read_lines_raw(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw UserError("cannot open file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

std::string lowercase(const std::string& s) {
  std::string out = s;
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Shared tail of pretrain/finetune: metrics log (config header + one JSON
// line per logged step), the training loop, a final summary on stdout, and
// wall-clock throughput on stderr.
int run_training(const RunConfig& rc, const char* mode, Model& model, AdamState& adam,
                 std::int64_t start_step, const BatchProvider& provider,
                 const std::int64_t* target_tokens) {
  TrainConfig tc = rc.train;
  tc.checkpoint_path = rc.checkpoint;
  tc.start_step = start_step;
  as_user([&] { tc.validate(); });
  if (tc.warmup > tc.steps)
    throw UserError("warmup (" + std::to_string(tc.warmup) + ") must be <= steps (" +
                    std::to_string(tc.steps) + ")");

  const std::string metrics_path =
      rc.metrics.empty() ? rc.checkpoint + ".metrics.jsonl" : rc.metrics;
  std::ofstream mf(metrics_path, std::ios::trunc);
  if (!mf) throw UserError("cannot write metrics log: " + metrics_path);
  mf << config_json_line(rc) << "\n";
  MetricsSink sink = [&](const StepInfo& info) { mf << metrics_json_line(info) << "\n"; };

  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult res = train_loop(model, adam, tc, provider, sink);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  mf.flush();
  if (!mf) throw std::runtime_error("metrics log write failed: " + metrics_path);

  if (target_tokens && secs > 0.0 && *target_tokens > 0)
    std::fprintf(stderr, "throughput: %lld target tokens in %.2f s (%.0f tokens/s)\n",
                 static_cast<long long>(*target_tokens), secs,
                 static_cast<double>(*target_tokens) / secs);

  std::printf("%s: %lld steps done, final loss %.6f\n", mode,
              static_cast<long long>(res.steps_done), res.last_loss);
  if (!rc.checkpoint.empty()) std::printf("checkpoint: %s\n", rc.checkpoint.c_str());
  std::printf("metrics: %s\n", metrics_path.c_str());
  return 0;
}

}  // namespace

void apply_config_file(RunConfig& rc, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw UserError("config file not found: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw UserError("config file " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw UserError("config file must hold a JSON object: " + path);
  for (const auto& item : j.items()) {
    apply_config_key(rc, item.key(), item.value());
    rc.set_keys.insert(item.key());
  }
}

void apply_env_seed(RunConfig& rc) {
  const char* env = std::getenv("PNET_SEED");
  if (!env || *env == '\0') return;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (end == env || *end != '\0' || errno == ERANGE || std::strchr(env, '-'))
    throw UserError("PNET_SEED must be a non-negative integer, got \"" + std::string(env) + "\"");
  rc.train.seed = v;
  rc.set_keys.insert("seed");
}

void finalize_config(RunConfig& rc) {
  if (!rc.is_set("warmup") && rc.train.warmup > rc.train.steps) rc.train.warmup = rc.train.steps;
}

std::string config_json_line(const RunConfig& rc) {
  auto qs = [](const std::string& s) { return "\"" + json_escape(s) + "\""; };
  auto b = [](bool v) { return v ? "true" : "false"; };
  std::string o = "{\"config\":{";
  o += "\"vocab_size\":" + std::to_string(rc.model.vocab_size);
  o += ",\"layers_enc\":" + std::to_string(rc.model.layers_enc);
  o += ",\"layers_dec\":" + std::to_string(rc.model.layers_dec);
  o += ",\"hidden\":" + std::to_string(rc.model.hidden);
  o += ",\"ffn\":" + std::to_string(rc.model.ffn);
  o += ",\"heads\":" + std::to_string(rc.model.heads);
  o += ",\"ngram\":" + std::to_string(rc.model.ngram);
  o += ",\"gamma\":" + fmt_double(rc.model.gamma);
  o += ",\"max_len\":" + std::to_string(rc.model.max_len);
  o += ",\"dropout\":" + fmt_double(rc.model.dropout);
  o += ",\"num_buckets\":" + std::to_string(rc.model.num_buckets);
  o += ",\"max_distance\":" + std::to_string(rc.model.max_distance);
  o += ",\"steps\":" + std::to_string(rc.train.steps);
  o += ",\"batch_size\":" + std::to_string(rc.train.batch_size);
  o += ",\"warmup\":" + std::to_string(rc.train.warmup);
  o += ",\"peak_lr\":" + fmt_double(rc.train.peak_lr);
  o += ",\"beta1\":" + fmt_double(rc.train.beta1);
  o += ",\"beta2\":" + fmt_double(rc.train.beta2);
  o += ",\"adam_eps\":" + fmt_double(rc.train.adam_eps);
  o += ",\"grad_clip\":" + fmt_double(rc.train.grad_clip);
  o += ",\"seed\":" + std::to_string(rc.train.seed);
  o += ",\"checkpoint_interval\":" + std::to_string(rc.train.checkpoint_interval);
  o += ",\"log_interval\":" + std::to_string(rc.train.log_interval);
  o += ",\"eval_interval\":" + std::to_string(rc.train.eval_interval);
  o += ",\"corpus\":" + qs(rc.corpus);
  o += ",\"vocab\":" + qs(rc.vocab);
  o += ",\"pairs\":" + qs(rc.pairs);
  o += ",\"checkpoint\":" + qs(rc.checkpoint);
  o += ",\"init_checkpoint\":" + qs(rc.init_checkpoint);
  o += ",\"input\":" + qs(rc.input);
  o += ",\"output\":" + qs(rc.output);
  o += ",\"metrics\":" + qs(rc.metrics);
  o += ",\"candidate\":" + qs(rc.candidate);
  o += ",\"reference\":" + qs(rc.reference);
  o += ",\"max_vocab\":" + std::to_string(rc.max_vocab);
  o += ",\"beam\":" + std::to_string(rc.beam);
  o += ",\"alpha\":" + fmt_double(rc.alpha);
  o += ",\"min_len\":" + std::to_string(rc.min_len);
  o += ",\"gen_max_len\":" + std::to_string(rc.gen_max_len);
  o += std::string(",\"block_trigrams\":") + b(rc.block_trigrams);
  o += std::string(",\"resume\":") + b(rc.resume);
  o += "}}";
  return o;
}

int cmd_pretrain(const RunConfig& rc0) {
  RunConfig rc = rc0;
  if (rc.corpus.empty()) throw UserError("pretrain: no corpus configured (--corpus)");
  if (!file_exists(rc.corpus)) throw UserError("pretrain: corpus not found: " + rc.corpus);
  if (rc.checkpoint.empty()) throw UserError("pretrain: no checkpoint path configured (--checkpoint)");

  const Vocab vocab = ensure_vocab(rc, "pretrain");
  resolve_vocab_size(rc, vocab, "pretrain");
  as_user([&] { rc.model.validate(); });

  // Lines shorter than 4 tokens (after truncation) can't produce a span.
  const auto lines = read_lines(rc.corpus);
  std::vector<Example> docs;
  std::int64_t skipped = 0;
  for (const std::string& line : lines) {
    std::vector<std::int64_t> ids = vocab.encode_line(line);
    if (static_cast<std::int64_t>(ids.size()) > rc.model.max_len) ids.resize(rc.model.max_len);
    if (static_cast<std::int64_t>(ids.size()) < 4) {
      ++skipped;
      continue;
    }
    docs.push_back({std::move(ids), {}});
  }
  if (docs.empty())
    throw UserError("pretrain: no usable corpus lines (each needs >= 4 tokens): " + rc.corpus);
  if (skipped > 0)
    std::cerr << "skipped " << skipped << " corpus lines with < 4 tokens\n";

  Model model;
  AdamState adam;
  std::int64_t start_step = 0;
  if (rc.resume && file_exists(rc.checkpoint)) {
    LoadedTrainState st = load_train_state_user(rc.checkpoint, "pretrain");
    reject_model_conflicts(rc, st.model.config, {}, "pretrain");
    if (st.model.config.vocab_size != vocab.size())
      throw UserError("pretrain: vocab file has " + std::to_string(vocab.size()) +
                      " ids but the checkpoint was trained with " +
                      std::to_string(st.model.config.vocab_size));
    model = std::move(st.model);
    adam = std::move(st.adam);
    start_step = st.step;
    rc.model = model.config;
    std::cerr << "resuming from " << rc.checkpoint << " at step " << start_step << "\n";
  } else {
    Rng init_rng(rc.train.seed);
    model = Model::init(rc.model, init_rng);
    adam = AdamState::init(model.params);
  }

  BatchCursor cursor(std::move(docs), rc.train.batch_size, rc.model.max_len,
                     mix_seed(rc.train.seed, 0x0ba7c4ULL));
  const std::uint64_t span_base = mix_seed(rc.train.seed, 0x5350414eULL);  // masking stream
  const std::int64_t vocab_size = rc.model.vocab_size;
  std::int64_t target_tokens = 0;
  BatchProvider provider = [&cursor, span_base, vocab_size,
                            &target_tokens](std::int64_t step) {
    const PaddedBatch& batch = cursor.at_step(step);
    const std::uint64_t step_seed = mix_seed(span_base, static_cast<std::uint64_t>(step));
    std::vector<Example> out;
    out.reserve(static_cast<std::size_t>(batch.rows));
    for (std::int64_t r = 0; r < batch.rows; ++r) {
      Rng rng(mix_seed(step_seed, static_cast<std::uint64_t>(r)));
      DenoisedExample de = mask_spans(batch.src_row(r), 64, 0.15, rng, vocab_size);
      if (de.target.empty()) continue;
      target_tokens += static_cast<std::int64_t>(de.target.size());
      out.push_back({std::move(de.encoder_input), std::move(de.target)});
    }
    return out;
  };

  return run_training(rc, "pretrain", model, adam, start_step, provider, &target_tokens);
}

int cmd_finetune(const RunConfig& rc0) {
  RunConfig rc = rc0;
  if (rc.pairs.empty()) throw UserError("finetune: no pair file configured (--pairs)");
  if (!file_exists(rc.pairs)) throw UserError("finetune: pair file not found: " + rc.pairs);
  if (rc.checkpoint.empty()) throw UserError("finetune: no checkpoint path configured (--checkpoint)");
  if (rc.init_checkpoint.empty())
    throw UserError("finetune: no base checkpoint configured (--init-checkpoint)");
  if (!file_exists(rc.init_checkpoint))
    throw UserError("finetune: base checkpoint not found: " + rc.init_checkpoint);
  if (rc.vocab.empty()) throw UserError("finetune: no vocab path configured (--vocab)");
  if (!file_exists(rc.vocab)) throw UserError("finetune: vocab file not found: " + rc.vocab);

  Vocab vocab;
  try {
    vocab = Vocab::load(rc.vocab);
  } catch (const std::exception& e) {
    throw UserError(std::string("finetune: cannot load vocab ") + rc.vocab + ": " + e.what());
  }

  Model model;
  AdamState adam;
  std::int64_t start_step = 0;
  if (rc.resume && file_exists(rc.checkpoint)) {
    LoadedTrainState st = load_train_state_user(rc.checkpoint, "finetune");
    reject_model_conflicts(rc, st.model.config, {"ngram", "gamma", "dropout", "max_len"},
                           "finetune");
    model = std::move(st.model);
    adam = std::move(st.adam);
    start_step = st.step;
    std::cerr << "resuming from " << rc.checkpoint << " at step " << start_step << "\n";
  } else {
    Checkpoint ck = load_checkpoint_user(rc.init_checkpoint, "finetune");
    reject_model_conflicts(rc, ck.config, {"ngram", "gamma", "dropout", "max_len"}, "finetune");
    ModelConfig target = ck.config;
    if (rc.is_set("ngram")) target.ngram = rc.model.ngram;
    if (rc.is_set("gamma")) target.gamma = rc.model.gamma;
    if (rc.is_set("dropout")) target.dropout = rc.model.dropout;
    if (rc.is_set("max_len")) target.max_len = rc.model.max_len;
    as_user([&] { target.validate(); });
    ParamStore store = adapt_params(ck.tensors, ck.config, target, mix_seed(rc.train.seed, 0xada7ULL));
    model = Model::from_store(target, std::move(store));
    adam = AdamState::init(model.params);
  }
  rc.model = model.config;
  if (model.config.vocab_size != vocab.size())
    throw UserError("finetune: vocab file has " + std::to_string(vocab.size()) +
                    " ids but the checkpoint was trained with " +
                    std::to_string(model.config.vocab_size));

  const auto lines = read_lines(rc.pairs);
  if (lines.empty()) throw UserError("finetune: pair file is empty: " + rc.pairs);
  std::vector<Example> pairs;
  pairs.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw UserError("finetune: line " + std::to_string(i + 1) + " of " + rc.pairs +
                      " has no TAB between source and target");
    Example ex;
    ex.src = vocab.encode_line(line.substr(0, tab));
    ex.tgt = vocab.encode_line(line.substr(tab + 1));
    if (ex.src.empty())
      throw UserError("finetune: line " + std::to_string(i + 1) + " of " + rc.pairs +
                      " has an empty source");
    if (ex.tgt.empty())
      throw UserError("finetune: line " + std::to_string(i + 1) + " of " + rc.pairs +
                      " has an empty target");
    if (static_cast<std::int64_t>(ex.src.size()) > rc.model.max_len)
      ex.src.resize(rc.model.max_len);
    if (static_cast<std::int64_t>(ex.tgt.size()) > rc.model.max_len - 1)
      ex.tgt.resize(rc.model.max_len - 1);
    ex.tgt.push_back(kEosId);
    pairs.push_back(std::move(ex));
  }

  BatchCursor cursor(std::move(pairs), rc.train.batch_size, rc.model.max_len,
                     mix_seed(rc.train.seed, 0x0ba7c4ULL));
  std::int64_t target_tokens = 0;
  BatchProvider provider = [&cursor, &target_tokens](std::int64_t step) {
    const PaddedBatch& batch = cursor.at_step(step);
    std::vector<Example> out;
    out.reserve(static_cast<std::size_t>(batch.rows));
    for (std::int64_t r = 0; r < batch.rows; ++r) {
      Example ex{batch.src_row(r), batch.tgt_row(r)};
      target_tokens += static_cast<std::int64_t>(ex.tgt.size());
      out.push_back(std::move(ex));
    }
    return out;
  };

  return run_training(rc, "finetune", model, adam, start_step, provider, &target_tokens);
}

int cmd_generate(const RunConfig& rc) {
  if (rc.checkpoint.empty()) throw UserError("generate: no checkpoint configured (--checkpoint)");
  if (!file_exists(rc.checkpoint))
    throw UserError("generate: checkpoint not found: " + rc.checkpoint);
  if (rc.input.empty()) throw UserError("generate: no input file configured (--input)");
  if (!file_exists(rc.input)) throw UserError("generate: input file not found: " + rc.input);
  if (rc.vocab.empty()) throw UserError("generate: no vocab path configured (--vocab)");
  if (!file_exists(rc.vocab)) throw UserError("generate: vocab file not found: " + rc.vocab);
  if (rc.beam < 1) throw UserError("generate: beam must be >= 1");
  if (rc.alpha < 0.0) throw UserError("generate: alpha must be >= 0");
  if (rc.min_len < 1) throw UserError("generate: min-len must be >= 1");
  if (rc.gen_max_len < 0) throw UserError("generate: max-len must be >= 0");

  Vocab vocab;
  try {
    vocab = Vocab::load(rc.vocab);
  } catch (const std::exception& e) {
    throw UserError(std::string("generate: cannot load vocab ") + rc.vocab + ": " + e.what());
  }
  Checkpoint ck = load_checkpoint_user(rc.checkpoint, "generate");
  if (ck.config.vocab_size != vocab.size())
    throw UserError("generate: vocab file has " + std::to_string(vocab.size()) +
                    " ids but the checkpoint was trained with " +
                    std::to_string(ck.config.vocab_size));
  const Model model = Model::from_store(ck.config, std::move(ck.tensors));

  GenOptions opts;
  opts.beam = rc.beam;
  opts.length_penalty = rc.alpha;
  opts.min_len = rc.min_len;
  opts.max_len = rc.gen_max_len;
  opts.block_trigrams = rc.block_trigrams;

  std::ofstream out_file;
  std::ostream* out = &std::cout;
  if (!rc.output.empty()) {
    out_file.open(rc.output, std::ios::trunc);
    if (!out_file) throw UserError("generate: cannot write output file: " + rc.output);
    out = &out_file;
  }

  const auto lines = read_lines_raw(rc.input);
  for (const std::string& line : lines) {
    std::vector<std::int64_t> src = vocab.encode_line(line);
    if (static_cast<std::int64_t>(src.size()) > model.config.max_len)
      src.resize(model.config.max_len);
    if (src.empty()) {
      *out << "\n";
      continue;
    }
    const GenResult res = beam_search(model, src, opts);
    *out << vocab.decode_ids(res.tokens) << "\n";
  }
  out->flush();
  if (!*out) throw std::runtime_error("generate: output write failed");
  return 0;
}

int cmd_eval(const RunConfig& rc) {
  if (rc.candidate.empty()) throw UserError("eval: no candidate file configured (--candidate)");
  if (!file_exists(rc.candidate)) throw UserError("eval: candidate file not found: " + rc.candidate);
  if (rc.reference.empty()) throw UserError("eval: no reference file configured (--reference)");
  if (!file_exists(rc.reference)) throw UserError("eval: reference file not found: " + rc.reference);

  const auto cand = read_lines_raw(rc.candidate);
  const auto ref = read_lines_raw(rc.reference);
  if (cand.size() != ref.size())
    throw UserError("eval: line count mismatch: candidate has " + std::to_string(cand.size()) +
                    " lines, reference has " + std::to_string(ref.size()));
  if (cand.empty()) throw UserError("eval: input files are empty");

  RougeScore s1{}, s2{}, sl{};
  for (std::size_t i = 0; i < cand.size(); ++i) {
    const auto c = split_ws(lowercase(cand[i]));
    const auto r = split_ws(lowercase(ref[i]));
    const RougeScore a = rouge_n(c, r, 1);
    const RougeScore b = rouge_n(c, r, 2);
    const RougeScore l = rouge_l(c, r);
    s1.precision += a.precision; s1.recall += a.recall; s1.f1 += a.f1;
    s2.precision += b.precision; s2.recall += b.recall; s2.f1 += b.f1;
    sl.precision += l.precision; sl.recall += l.recall; sl.f1 += l.f1;
  }
  const double n = static_cast<double>(cand.size());
  auto block = [&](const char* name, const RougeScore& s) {
    std::printf("\"%s\":{\"precision\":%.6f,\"recall\":%.6f,\"f1\":%.6f}", name,
                s.precision / n, s.recall / n, s.f1 / n);
  };
  std::printf("{\"pairs\":%zu,", cand.size());
  block("rouge1", s1);
  std::printf(",");
  block("rouge2", s2);
  std::printf(",");
  block("rougeL", sl);
  std::printf("}\n");
  return 0;
}

int cmd_gradcheck(const RunConfig& rc) {
  const auto cases = run_gradient_suite(rc.train.seed);
  bool all_pass = true;
  const SuiteCase* worst = nullptr;
  double worst_ratio = -1.0;
  for (const SuiteCase& c : cases) {
    std::printf("%-24s max_rel_err %.3e  tol %.0e  %s\n", c.name.c_str(), c.max_rel_err,
                c.tolerance, c.pass ? "PASS" : "FAIL");
    if (!c.pass) all_pass = false;
    const double ratio = c.max_rel_err / c.tolerance;
    if (ratio > worst_ratio) {
      worst_ratio = ratio;
      worst = &c;
    }
  }
  if (worst && !worst->worst.empty())
    std::printf("worst: %s %s\n", worst->name.c_str(), worst->worst.c_str());
  std::printf("%s: %zu/%zu cases pass\n", all_pass ? "OK" : "FAILED",
              static_cast<std::size_t>(std::count_if(cases.begin(), cases.end(),
                                                     [](const SuiteCase& c) { return c.pass; })),
              cases.size());
  return all_pass ? 0 : 1;
}

int cmd_build_vocab(const RunConfig& rc) {
  if (rc.corpus.empty()) throw UserError("vocab: no corpus configured (--corpus)");
  if (!file_exists(rc.corpus)) throw UserError("vocab: corpus not found: " + rc.corpus);
  if (rc.vocab.empty()) throw UserError("vocab: no output path configured (--vocab)");
  const auto lines = read_lines(rc.corpus);
  if (lines.empty()) throw UserError("vocab: corpus is empty: " + rc.corpus);
  const Vocab v = as_user([&] { return Vocab::build(lines, rc.max_vocab); });
  v.save(rc.vocab);
  std::printf("vocab: %lld ids -> %s\n", static_cast<long long>(v.size()), rc.vocab.c_str());
  return 0;
}

int run_guarded(const std::function<int()>& f) {
  try {
    return f();
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  } catch (...) {
    std::cerr << "internal error: unknown exception\n";
    return 1;
  }
}

}  // namespace pnet

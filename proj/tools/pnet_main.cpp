#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"

#include "pnet/cli.hpp"

namespace {

// One CLI flag staged for the merge: applied to the RunConfig (and recorded
// in set_keys) only when the user actually passed it, so config-file values
// survive unless overridden.
struct Binding {
  CLI::Option* opt;
  const char* key;
  std::function<void(pnet::RunConfig&)> copy;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"seq2seq toolkit with future n-gram prediction"};
  app.require_subcommand(1);

  pnet::RunConfig fl;  // flag staging area; starts at defaults so --help shows them
  std::string config_path;
  std::vector<Binding> binds;

  auto bind = [&binds](CLI::Option* opt, const char* key,
                       std::function<void(pnet::RunConfig&)> copy) {
    opt->capture_default_str();
    binds.push_back({opt, key, std::move(copy)});
  };

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file (flags override its keys)");
  };
  auto add_seed = [&](CLI::App* sub) {
    bind(sub->add_option("--seed", fl.train.seed, "RNG seed (PNET_SEED env overrides)"), "seed",
         [&fl](pnet::RunConfig& r) { r.train.seed = fl.train.seed; });
  };
  auto add_train_flags = [&](CLI::App* sub) {
    bind(sub->add_option("--steps", fl.train.steps, "optimizer steps to run"), "steps",
         [&fl](pnet::RunConfig& r) { r.train.steps = fl.train.steps; });
    bind(sub->add_option("--batch-size", fl.train.batch_size, "examples per step"), "batch_size",
         [&fl](pnet::RunConfig& r) { r.train.batch_size = fl.train.batch_size; });
    bind(sub->add_option("--warmup", fl.train.warmup, "linear warmup steps"), "warmup",
         [&fl](pnet::RunConfig& r) { r.train.warmup = fl.train.warmup; });
    bind(sub->add_option("--peak-lr", fl.train.peak_lr, "learning rate after warmup"), "peak_lr",
         [&fl](pnet::RunConfig& r) { r.train.peak_lr = fl.train.peak_lr; });
    bind(sub->add_option("--log-interval", fl.train.log_interval, "steps between metrics lines"),
         "log_interval", [&fl](pnet::RunConfig& r) { r.train.log_interval = fl.train.log_interval; });
    bind(sub->add_option("--checkpoint-interval", fl.train.checkpoint_interval,
                         "steps between checkpoints (0: only at the end)"),
         "checkpoint_interval",
         [&fl](pnet::RunConfig& r) { r.train.checkpoint_interval = fl.train.checkpoint_interval; });
    bind(sub->add_option("--metrics", fl.metrics, "metrics log path (default <checkpoint>.metrics.jsonl)"),
         "metrics", [&fl](pnet::RunConfig& r) { r.metrics = fl.metrics; });
    bind(sub->add_flag("--resume", fl.resume, "continue from the output checkpoint if it exists"),
         "resume", [&fl](pnet::RunConfig& r) { r.resume = fl.resume; });
    bind(sub->add_option("--ngram", fl.model.ngram, "future tokens predicted per position"), "ngram",
         [&fl](pnet::RunConfig& r) { r.model.ngram = fl.model.ngram; });
    bind(sub->add_option("--gamma", fl.model.gamma, "future token weight decay"), "gamma",
         [&fl](pnet::RunConfig& r) { r.model.gamma = fl.model.gamma; });
    bind(sub->add_option("--dropout", fl.model.dropout, "dropout probability"), "dropout",
         [&fl](pnet::RunConfig& r) { r.model.dropout = fl.model.dropout; });
    bind(sub->add_option("--max-len", fl.model.max_len, "maximum sequence length"), "max_len",
         [&fl](pnet::RunConfig& r) { r.model.max_len = fl.model.max_len; });
  };
  auto add_arch_flags = [&](CLI::App* sub) {
    bind(sub->add_option("--hidden", fl.model.hidden, "model width"), "hidden",
         [&fl](pnet::RunConfig& r) { r.model.hidden = fl.model.hidden; });
    bind(sub->add_option("--ffn", fl.model.ffn, "feed-forward width"), "ffn",
         [&fl](pnet::RunConfig& r) { r.model.ffn = fl.model.ffn; });
    bind(sub->add_option("--heads", fl.model.heads, "attention heads"), "heads",
         [&fl](pnet::RunConfig& r) { r.model.heads = fl.model.heads; });
    bind(sub->add_option("--layers-enc", fl.model.layers_enc, "encoder layers"), "layers_enc",
         [&fl](pnet::RunConfig& r) { r.model.layers_enc = fl.model.layers_enc; });
    bind(sub->add_option("--layers-dec", fl.model.layers_dec, "decoder layers"), "layers_dec",
         [&fl](pnet::RunConfig& r) { r.model.layers_dec = fl.model.layers_dec; });
  };

  CLI::App* pretrain = app.add_subcommand("pretrain", "span-denoising pre-training on a corpus");
  add_config(pretrain);
  add_seed(pretrain);
  bind(pretrain->add_option("--corpus", fl.corpus, "training corpus, one document per line"),
       "corpus", [&fl](pnet::RunConfig& r) { r.corpus = fl.corpus; });
  bind(pretrain->add_option("--vocab", fl.vocab, "vocab file (built from the corpus if missing)"),
       "vocab", [&fl](pnet::RunConfig& r) { r.vocab = fl.vocab; });
  bind(pretrain->add_option("--checkpoint", fl.checkpoint, "output checkpoint path"), "checkpoint",
       [&fl](pnet::RunConfig& r) { r.checkpoint = fl.checkpoint; });
  bind(pretrain->add_option("--max-vocab", fl.max_vocab, "vocab size cap when building"),
       "max_vocab", [&fl](pnet::RunConfig& r) { r.max_vocab = fl.max_vocab; });
  add_train_flags(pretrain);
  add_arch_flags(pretrain);

  CLI::App* finetune = app.add_subcommand("finetune", "supervised training from a checkpoint");
  add_config(finetune);
  add_seed(finetune);
  bind(finetune->add_option("--pairs", fl.pairs, "pair file, source TAB target per line"), "pairs",
       [&fl](pnet::RunConfig& r) { r.pairs = fl.pairs; });
  bind(finetune->add_option("--vocab", fl.vocab, "vocab file"), "vocab",
       [&fl](pnet::RunConfig& r) { r.vocab = fl.vocab; });
  bind(finetune->add_option("--init-checkpoint", fl.init_checkpoint, "checkpoint to start from"),
       "init_checkpoint", [&fl](pnet::RunConfig& r) { r.init_checkpoint = fl.init_checkpoint; });
  bind(finetune->add_option("--checkpoint", fl.checkpoint, "output checkpoint path"), "checkpoint",
       [&fl](pnet::RunConfig& r) { r.checkpoint = fl.checkpoint; });
  add_train_flags(finetune);

  CLI::App* generate = app.add_subcommand("generate", "beam-search decoding of an input file");
  add_config(generate);
  add_seed(generate);
  bind(generate->add_option("--checkpoint", fl.checkpoint, "model checkpoint"), "checkpoint",
       [&fl](pnet::RunConfig& r) { r.checkpoint = fl.checkpoint; });
  bind(generate->add_option("--vocab", fl.vocab, "vocab file"), "vocab",
       [&fl](pnet::RunConfig& r) { r.vocab = fl.vocab; });
  bind(generate->add_option("--input", fl.input, "source file, one line per example"), "input",
       [&fl](pnet::RunConfig& r) { r.input = fl.input; });
  bind(generate->add_option("--output", fl.output, "output file (stdout when omitted)"), "output",
       [&fl](pnet::RunConfig& r) { r.output = fl.output; });
  bind(generate->add_option("--beam", fl.beam, "beam width"), "beam",
       [&fl](pnet::RunConfig& r) { r.beam = fl.beam; });
  bind(generate->add_option("--alpha", fl.alpha, "length penalty exponent"), "alpha",
       [&fl](pnet::RunConfig& r) { r.alpha = fl.alpha; });
  bind(generate->add_option("--min-len", fl.min_len, "minimum generated length"), "min_len",
       [&fl](pnet::RunConfig& r) { r.min_len = fl.min_len; });
  bind(generate->add_option("--max-len", fl.gen_max_len, "generation cap (0: model max_len)"),
       "gen_max_len", [&fl](pnet::RunConfig& r) { r.gen_max_len = fl.gen_max_len; });
  bind(generate->add_flag("--block-trigrams", fl.block_trigrams,
                          "never emit an already-generated trigram"),
       "block_trigrams", [&fl](pnet::RunConfig& r) { r.block_trigrams = fl.block_trigrams; });

  CLI::App* eval = app.add_subcommand("eval", "ROUGE report for candidate vs reference files");
  add_config(eval);
  bind(eval->add_option("--candidate", fl.candidate, "generated lines"), "candidate",
       [&fl](pnet::RunConfig& r) { r.candidate = fl.candidate; });
  bind(eval->add_option("--reference", fl.reference, "gold lines"), "reference",
       [&fl](pnet::RunConfig& r) { r.reference = fl.reference; });

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every op");
  add_config(gradcheck);
  add_seed(gradcheck);

  CLI::App* vocab_cmd = app.add_subcommand("vocab", "build a vocab file from a corpus");
  add_config(vocab_cmd);
  bind(vocab_cmd->add_option("--corpus", fl.corpus, "corpus, one document per line"), "corpus",
       [&fl](pnet::RunConfig& r) { r.corpus = fl.corpus; });
  bind(vocab_cmd->add_option("--vocab", fl.vocab, "output vocab path"), "vocab",
       [&fl](pnet::RunConfig& r) { r.vocab = fl.vocab; });
  bind(vocab_cmd->add_option("--max-vocab", fl.max_vocab, "vocab size cap"), "max_vocab",
       [&fl](pnet::RunConfig& r) { r.max_vocab = fl.max_vocab; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // bad usage is a user error
  }

  return pnet::run_guarded([&]() -> int {
    pnet::RunConfig rc;
    if (!config_path.empty()) pnet::apply_config_file(rc, config_path);
    for (const Binding& b : binds) {
      if (b.opt->count() > 0) {
        b.copy(rc);
        rc.set_keys.insert(b.key);
      }
    }
    pnet::apply_env_seed(rc);
    pnet::finalize_config(rc);

    if (app.got_subcommand(pretrain)) return pnet::cmd_pretrain(rc);
    if (app.got_subcommand(finetune)) return pnet::cmd_finetune(rc);
    if (app.got_subcommand(generate)) return pnet::cmd_generate(rc);
    if (app.got_subcommand(eval)) return pnet::cmd_eval(rc);
    if (app.got_subcommand(gradcheck)) return pnet::cmd_gradcheck(rc);
    if (app.got_subcommand(vocab_cmd)) return pnet::cmd_build_vocab(rc);
    throw std::logic_error("no subcommand dispatched");
  });
}

#pragma once

// Run configuration records. The JSON field names match the struct fields
// exactly so config files and CLI overrides stay in sync.

#include <cstdint>
#include <string>

#include <json.hpp>

#include "etclip/agent.hpp"
#include "etclip/common.hpp"
#include "etclip/dualenc.hpp"
#include "etclip/worldgen.hpp"

namespace etclip {

struct PretrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double lr = 3e-4;
  std::uint64_t seed = 0;
};

struct TrainConfig {
  double alpha = 0.5;
  int epochs = 20;
  int batch_size = 8;
  double lr_agent = 2e-3;
  double lr_dualenc = 1e-4;
  std::uint64_t seed = 0;
  std::string object_loss_steps = "all";  // "all" | "interaction"
  std::string mode = "baseline";          // "baseline" | "clip_aux"
  int max_train_episodes = 0;             // 0 = use the full train split

  AgentConfig agent;
  DualEncConfig dualenc;

  void validate() const {
    ETCLIP_CHECK(alpha >= 0.0 && alpha <= 1.0,
                 "alpha must lie in [0,1], got " + std::to_string(alpha));
    ETCLIP_CHECK(epochs >= 0, "epochs must be non-negative");
    ETCLIP_CHECK(batch_size >= 1, "batch_size must be positive");
    ETCLIP_CHECK(mode == "baseline" || mode == "clip_aux",
                 "mode must be baseline or clip_aux, got " + mode);
    ETCLIP_CHECK(
        object_loss_steps == "all" || object_loss_steps == "interaction",
        "object_loss_steps must be all or interaction");
  }
};

// in namespace worldgen so argument-dependent lookup finds the adapters
namespace worldgen {

inline void to_json(nlohmann::json& j, const WorldgenConfig& c) {
  j = {{"n_train", c.n_train},
       {"n_valid_seen", c.n_valid_seen},
       {"n_valid_unseen", c.n_valid_unseen},
       {"grid", c.grid},
       {"cell_px", c.cell_px},
       {"min_objects", c.min_objects},
       {"max_objects", c.max_objects},
       {"wall_segments", c.wall_segments},
       {"modifier_prob", c.modifier_prob},
       {"rare_train_count", c.rare_train_count},
       {"rare_valid_frac", c.rare_valid_frac},
       {"n_caption_pairs", c.n_caption_pairs},
       {"n_probe", c.n_probe}};
}

inline void from_json(const nlohmann::json& j, WorldgenConfig& c) {
  c.n_train = j.value("n_train", c.n_train);
  c.n_valid_seen = j.value("n_valid_seen", c.n_valid_seen);
  c.n_valid_unseen = j.value("n_valid_unseen", c.n_valid_unseen);
  c.grid = j.value("grid", c.grid);
  c.cell_px = j.value("cell_px", c.cell_px);
  c.min_objects = j.value("min_objects", c.min_objects);
  c.max_objects = j.value("max_objects", c.max_objects);
  c.wall_segments = j.value("wall_segments", c.wall_segments);
  c.modifier_prob = j.value("modifier_prob", c.modifier_prob);
  c.rare_train_count = j.value("rare_train_count", c.rare_train_count);
  c.rare_valid_frac = j.value("rare_valid_frac", c.rare_valid_frac);
  c.n_caption_pairs = j.value("n_caption_pairs", c.n_caption_pairs);
  c.n_probe = j.value("n_probe", c.n_probe);
}

}  // namespace worldgen

inline void to_json(nlohmann::json& j, const AgentConfig& c) {
  j = {{"embed_dim", c.embed_dim},   {"visual_hidden", c.visual_hidden},
       {"layers", c.layers},
       {"heads", c.heads},           {"max_time", c.max_time},
       {"max_lang", c.max_lang},     {"frame_size", c.frame_size},
       {"init_std", c.init_std},     {"object_loss_steps", c.object_loss_steps}};
}

inline void from_json(const nlohmann::json& j, AgentConfig& c) {
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.visual_hidden = j.value("visual_hidden", c.visual_hidden);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.max_time = j.value("max_time", c.max_time);
  c.max_lang = j.value("max_lang", c.max_lang);
  c.frame_size = j.value("frame_size", c.frame_size);
  c.init_std = j.value("init_std", c.init_std);
  c.object_loss_steps = j.value("object_loss_steps", c.object_loss_steps);
}

inline void to_json(nlohmann::json& j, const DualEncConfig& c) {
  j = {{"embed_dim", c.embed_dim},     {"image_encoder", c.image_encoder},
       {"image_hidden", c.image_hidden}, {"image_patch", c.image_patch},
       {"image_layers", c.image_layers}, {"text_layers", c.text_layers},
       {"heads", c.heads},             {"max_text_len", c.max_text_len},
       {"frame_size", c.frame_size},   {"init_std", c.init_std},
       {"text_positional", c.text_positional},
       {"prompt_prefix", c.prompt_prefix}};
}

inline void from_json(const nlohmann::json& j, DualEncConfig& c) {
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.image_encoder = j.value("image_encoder", c.image_encoder);
  c.image_hidden = j.value("image_hidden", c.image_hidden);
  c.image_patch = j.value("image_patch", c.image_patch);
  c.image_layers = j.value("image_layers", c.image_layers);
  c.text_layers = j.value("text_layers", c.text_layers);
  c.heads = j.value("heads", c.heads);
  c.max_text_len = j.value("max_text_len", c.max_text_len);
  c.frame_size = j.value("frame_size", c.frame_size);
  c.init_std = j.value("init_std", c.init_std);
  c.text_positional = j.value("text_positional", c.text_positional);
  c.prompt_prefix = j.value("prompt_prefix", c.prompt_prefix);
}

inline void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, PretrainConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.seed = j.value("seed", c.seed);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"alpha", c.alpha},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"lr_agent", c.lr_agent},
       {"lr_dualenc", c.lr_dualenc},
       {"seed", c.seed},
       {"object_loss_steps", c.object_loss_steps},
       {"mode", c.mode},
       {"max_train_episodes", c.max_train_episodes},
       {"agent", c.agent},
       {"dualenc", c.dualenc}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.alpha = j.value("alpha", c.alpha);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr_agent = j.value("lr_agent", c.lr_agent);
  c.lr_dualenc = j.value("lr_dualenc", c.lr_dualenc);
  c.seed = j.value("seed", c.seed);
  c.object_loss_steps = j.value("object_loss_steps", c.object_loss_steps);
  c.mode = j.value("mode", c.mode);
  c.max_train_episodes = j.value("max_train_episodes", c.max_train_episodes);
  if (j.contains("agent")) j.at("agent").get_to(c.agent);
  if (j.contains("dualenc")) j.at("dualenc").get_to(c.dualenc);
  c.agent.object_loss_steps = c.object_loss_steps;
}

}  // namespace etclip

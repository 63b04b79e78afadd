#pragma once

// Miniature embodied-instruction-following benchmark: procedurally
// generated gridworld scenes, top-down rendered frames, templated
// instructions, breadth-first expert demonstrations, goal conditions,
// seen/unseen splits and an image-caption corpus for contrastive
// pretraining.

#include <array>
#include <cstdint>
#include <deque>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "etclip/common.hpp"
#include "etclip/encoding.hpp"
#include "etclip/rng.hpp"

namespace etclip::worldgen {

// ---- actions ----

enum Action : int {
  kForward = 0,
  kTurnLeft = 1,
  kTurnRight = 2,
  kPickup = 3,
  kPut = 4,
  kToggle = 5,
  kStop = 6,
};
constexpr int kNumActions = 7;

inline bool is_interaction(int a) {
  return a == kPickup || a == kPut || a == kToggle;
}

inline const char* action_name(int a) {
  static const char* names[] = {"forward", "turn_left", "turn_right",
                                "pickup",  "put",       "toggle",
                                "stop"};
  return names[a];
}

// ---- object vocabulary ----

struct ObjectClass {
  std::string name;
  bool small = false;
  bool toggleable = false;
};

// `none` is always present and always last.
inline const std::vector<ObjectClass>& object_classes() {
  static const std::vector<ObjectClass> k = {
      {"key", true, false},      {"pencil", true, false},
      {"mug", true, false},      {"book", true, false},
      {"chair", false, false},   {"bed", false, false},
      {"box", false, false},     {"lamp", false, true},
      {"microwave", false, true},{"plant", false, false},
      {"none", false, false},
  };
  return k;
}

inline int num_object_classes() {
  return static_cast<int>(object_classes().size());
}
inline int none_class() { return num_object_classes() - 1; }

inline int object_class_id(const std::string& name) {
  const auto& cs = object_classes();
  for (std::size_t i = 0; i < cs.size(); ++i)
    if (cs[i].name == name) return static_cast<int>(i);
  detail::fail("unknown object class: " + name);
}

// Low-frequency synonyms; substituted with controlled counts so the
// rare-word subset is non-empty and its threshold testable.
inline const std::map<std::string, std::string>& rare_aliases() {
  static const std::map<std::string, std::string> k = {
      {"key", "skeleton"}, {"pencil", "stylus"}, {"mug", "tankard"},
      {"book", "tome"},    {"chair", "settee"},  {"lamp", "lantern"},
  };
  return k;
}

// ---- colors and palettes ----

struct Rgb {
  std::uint8_t r, g, b;
};

inline const std::vector<std::pair<std::string, Rgb>>& color_palette() {
  static const std::vector<std::pair<std::string, Rgb>> k = {
      {"red", {220, 40, 40}},    {"green", {40, 200, 40}},
      {"blue", {40, 80, 220}},   {"yellow", {230, 220, 40}},
      {"purple", {160, 40, 200}},{"orange", {240, 140, 20}},
      {"cyan", {40, 210, 210}},  {"magenta", {220, 40, 150}},
  };
  return k;
}

inline int num_colors() { return static_cast<int>(color_palette().size()); }

struct PaletteBundle {
  Rgb background;
  Rgb wall;
};

// 0..4 train/seen, 5..7 held out for the unseen split.
inline const std::vector<PaletteBundle>& scene_palettes() {
  static const std::vector<PaletteBundle> k = {
      {{16, 16, 16}, {90, 90, 90}},   {{26, 26, 36}, {110, 100, 80}},
      {{36, 26, 16}, {80, 80, 120}},  {{10, 20, 30}, {100, 70, 70}},
      {{30, 30, 10}, {70, 100, 100}}, {{20, 26, 20}, {95, 85, 95}},
      {{28, 18, 28}, {85, 95, 75}},   {{14, 24, 24}, {105, 90, 80}},
  };
  return k;
}

inline const std::vector<int>& train_palettes() {
  static const std::vector<int> k = {0, 1, 2, 3, 4};
  return k;
}
inline const std::vector<int>& unseen_palettes() {
  static const std::vector<int> k = {5, 6, 7};
  return k;
}

// Footprint classifier threshold shared with evalkit: small glyphs render
// to <= 4 pixels, large glyphs to >= 9.
constexpr int kSmallFootprintThreshold = 5;

// ---- scene ----

struct ObjectSpec {
  int class_id = 0;
  int color = 0;
  int r = 0, c = 0;  // r == -1 while held by the agent
  bool toggled = false;
};

struct Scene {
  int rows = 8, cols = 8;
  std::vector<std::uint8_t> walls;  // rows*cols
  std::vector<ObjectSpec> objects;
  int agent_r = 0, agent_c = 0, agent_dir = 0;  // 0=N 1=E 2=S 3=W
  int palette_id = 0;

  bool wall_at(int r, int c) const {
    return walls[static_cast<std::size_t>(r) * cols + c] != 0;
  }
  bool in_bounds(int r, int c) const {
    return r >= 0 && r < rows && c >= 0 && c < cols;
  }
  int object_at(int r, int c) const {
    for (std::size_t i = 0; i < objects.size(); ++i)
      if (objects[i].r == r && objects[i].c == c) return static_cast<int>(i);
    return -1;
  }
  bool passable(int r, int c) const {
    return in_bounds(r, c) && !wall_at(r, c) && object_at(r, c) < 0;
  }
};

inline std::uint64_t wall_layout_hash(const Scene& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::uint8_t w : s.walls) {
    h ^= w;
    h *= 1099511628211ULL;
  }
  return h;
}

constexpr std::array<int, 4> kDr = {-1, 0, 1, 0};
constexpr std::array<int, 4> kDc = {0, 1, 0, -1};

// ---- rendering ----

// Allocentric top-down raster with an agent marker. Glyph shape encodes
// the object class, hue encodes its color attribute. Large glyphs are a
// 3x3 pixel block with a class-specific dim pattern; small glyphs are two
// pixels in a class-specific orientation.
inline void draw_px(std::vector<float>& img, int size, int r, int c, Rgb col) {
  if (r < 0 || r >= size || c < 0 || c >= size) return;
  std::size_t o = (static_cast<std::size_t>(r) * size + c) * 3;
  img[o] = col.r / 255.0f;
  img[o + 1] = col.g / 255.0f;
  img[o + 2] = col.b / 255.0f;
}

inline Rgb dim_color(Rgb c, float f) {
  return Rgb{static_cast<std::uint8_t>(std::lround(c.r * f)),
             static_cast<std::uint8_t>(std::lround(c.g * f)),
             static_cast<std::uint8_t>(std::lround(c.b * f))};
}

// offsets within the cell block for small classes
// (dr, dc, dim) pixels; classes get distinct pixel counts and brightness
// masses so tiny glyphs stay separable at 16x16
inline const std::vector<std::tuple<int, int, bool>>& small_glyph(
    int class_id) {
  static const std::vector<std::vector<std::tuple<int, int, bool>>> k = {
      {{0, 0, false}, {0, 1, false}},                    // key: 2 bright
      {{0, 0, false}, {1, 0, false}, {1, 1, false}},     // pencil: 3 bright
      {{0, 0, false}, {0, 1, false},
       {1, 0, false}, {1, 1, false}},                    // mug: full block
      {{0, 0, false}, {1, 1, true}},                     // book: bright + dim
  };
  return k[class_id];
}

// indices (row-major 0..8) of dimmed pixels in the 3x3 large glyph
inline const std::vector<int>& large_dim_pattern(int class_id) {
  static const std::map<int, std::vector<int>> k = {
      {4, {}},               // chair: 0 dim
      {5, {4}},              // bed: 1 dim
      {6, {0, 2, 6, 8}},     // box: 4 dim
      {7, {2, 6}},           // lamp: 2 dim
      {8, {3, 4, 5}},        // microwave: 3 dim
      {9, {0, 2, 4, 6, 8}},  // plant: 5 dim
  };
  return k.at(class_id);
}

inline void draw_object(std::vector<float>& img, int size, int cell_px,
                        const ObjectSpec& o) {
  if (o.r < 0) return;  // held
  Rgb col = color_palette()[o.color].second;
  float dimf = o.toggled ? 0.7f : 0.35f;
  int base_r = o.r * cell_px, base_c = o.c * cell_px;
  if (object_classes()[o.class_id].small) {
    for (auto [dr, dc, dm] : small_glyph(o.class_id))
      draw_px(img, size, base_r + dr, base_c + dc,
              dm ? dim_color(col, dimf) : col);
  } else {
    const auto& dim = large_dim_pattern(o.class_id);
    for (int i = 0; i < 9; ++i) {
      int dr = i / 3 - 1, dc = i % 3 - 1;
      bool is_dim = std::find(dim.begin(), dim.end(), i) != dim.end();
      draw_px(img, size, base_r + dr, base_c + dc,
              is_dim ? dim_color(col, dimf) : col);
    }
  }
}

inline void draw_agent(std::vector<float>& img, int size, int cell_px, int r,
                       int c, int dir) {
  // 3 white pixels plus one dark corner marking the facing direction
  static const std::pair<int, int> corner[4] = {{0, 0}, {0, 1}, {1, 1}, {1, 0}};
  int br = r * cell_px, bc = c * cell_px;
  for (int dr = 0; dr < 2; ++dr)
    for (int dc = 0; dc < 2; ++dc)
      draw_px(img, size, br + dr, bc + dc, Rgb{255, 255, 255});
  auto [dr, dc] = corner[dir];
  draw_px(img, size, br + dr, bc + dc, Rgb{64, 64, 64});
}

inline std::vector<float> render_objects(const Scene& s,
                                         const std::vector<int>& object_idx,
                                         bool include_agent,
                                         int cell_px = 2) {
  int size = s.rows * cell_px;
  const PaletteBundle& pal = scene_palettes()[s.palette_id];
  std::vector<float> img(static_cast<std::size_t>(size) * size * 3);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) draw_px(img, size, r, c, pal.background);
  for (int r = 0; r < s.rows; ++r)
    for (int c = 0; c < s.cols; ++c)
      if (s.wall_at(r, c))
        for (int dr = 0; dr < cell_px; ++dr)
          for (int dc = 0; dc < cell_px; ++dc)
            draw_px(img, size, r * cell_px + dr, c * cell_px + dc, pal.wall);
  for (int i : object_idx) draw_object(img, size, cell_px, s.objects[i]);
  if (include_agent) draw_agent(img, size, cell_px, s.agent_r, s.agent_c,
                                s.agent_dir);
  return img;
}

inline std::vector<float> render_frame(const Scene& s,
                                       bool include_agent = true,
                                       int cell_px = 2) {
  std::vector<int> all;
  for (std::size_t i = 0; i < s.objects.size(); ++i)
    all.push_back(static_cast<int>(i));
  return render_objects(s, all, include_agent, cell_px);
}

// ---- goals & simulator ----

struct GoalCond {
  enum Kind { kHolding, kObjectAt, kToggled };
  Kind kind = kHolding;
  int class_id = 0;
  int r = -1, c = -1;  // kObjectAt only
};

struct SimState {
  Scene scene;
  int held = -1;  // index into scene.objects
  bool done = false;

  explicit SimState(const Scene& s) : scene(s) {}

  void step(int action, int object_pred) {
    if (done) return;
    Scene& s = scene;
    int fr = s.agent_r + kDr[s.agent_dir];
    int fc = s.agent_c + kDc[s.agent_dir];
    switch (action) {
      case kForward:
        if (s.passable(fr, fc)) {
          s.agent_r = fr;
          s.agent_c = fc;
        }
        break;
      case kTurnLeft:
        s.agent_dir = (s.agent_dir + 3) & 3;
        break;
      case kTurnRight:
        s.agent_dir = (s.agent_dir + 1) & 3;
        break;
      case kPickup: {
        int oi = s.object_at(fr, fc);
        if (oi >= 0 && held < 0 && s.objects[oi].class_id == object_pred) {
          held = oi;
          s.objects[oi].r = -1;
          s.objects[oi].c = -1;
        }
        break;
      }
      case kPut:
        if (held >= 0 && s.in_bounds(fr, fc) && !s.wall_at(fr, fc) &&
            s.object_at(fr, fc) < 0 &&
            s.objects[held].class_id == object_pred) {
          s.objects[held].r = fr;
          s.objects[held].c = fc;
          held = -1;
        }
        break;
      case kToggle: {
        int oi = s.object_at(fr, fc);
        if (oi >= 0 && object_classes()[s.objects[oi].class_id].toggleable &&
            s.objects[oi].class_id == object_pred)
          s.objects[oi].toggled = !s.objects[oi].toggled;
        break;
      }
      case kStop:
        done = true;
        break;
      default:
        detail::fail("unknown action id " + std::to_string(action));
    }
  }

  bool satisfied(const GoalCond& g) const {
    switch (g.kind) {
      case GoalCond::kHolding:
        return held >= 0 && scene.objects[held].class_id == g.class_id;
      case GoalCond::kObjectAt:
        for (auto& o : scene.objects)
          if (o.class_id == g.class_id && o.r == g.r && o.c == g.c)
            return true;
        return false;
      case GoalCond::kToggled:
        for (auto& o : scene.objects)
          if (o.class_id == g.class_id && o.toggled) return true;
        return false;
    }
    return false;
  }

  double goal_fraction(const std::vector<GoalCond>& goals) const {
    if (goals.empty()) return 1.0;
    int sat = 0;
    for (auto& g : goals)
      if (satisfied(g)) ++sat;
    return static_cast<double>(sat) / static_cast<double>(goals.size());
  }
};

// ---- expert planner ----

// Breadth-first shortest path over cells; deterministic neighbor order
// N,E,S,W. Returns per-cell parent direction, -1 if unreachable.
inline std::vector<int> bfs_dist(const Scene& s, int sr, int sc) {
  std::vector<int> dist(static_cast<std::size_t>(s.rows) * s.cols, -1);
  std::deque<std::pair<int, int>> q;
  dist[static_cast<std::size_t>(sr) * s.cols + sc] = 0;
  q.emplace_back(sr, sc);
  while (!q.empty()) {
    auto [r, c] = q.front();
    q.pop_front();
    for (int d = 0; d < 4; ++d) {
      int nr = r + kDr[d], nc = c + kDc[d];
      if (!s.passable(nr, nc)) continue;
      std::size_t ni = static_cast<std::size_t>(nr) * s.cols + nc;
      if (dist[ni] < 0) {
        dist[ni] = dist[static_cast<std::size_t>(r) * s.cols + c] + 1;
        q.emplace_back(nr, nc);
      }
    }
  }
  return dist;
}

// Emit minimal turn actions from dir a to dir b.
inline void emit_turns(int from, int to, std::vector<int>& out) {
  int diff = (to - from) & 3;
  if (diff == 1) out.push_back(kTurnRight);
  else if (diff == 3) out.push_back(kTurnLeft);
  else if (diff == 2) {
    out.push_back(kTurnRight);
    out.push_back(kTurnRight);
  }
}

// Navigation plan: walk to a passable cell adjacent to (tr,tc) and end
// facing it. Forward count equals the BFS distance to the chosen stand
// cell. Throws if unreachable.
inline std::vector<int> plan_navigation(const SimState& st, int tr, int tc) {
  const Scene& s = st.scene;
  auto dist = bfs_dist(s, s.agent_r, s.agent_c);
  int best_r = -1, best_c = -1, best_d = -1, face = -1;
  for (int d = 0; d < 4; ++d) {
    int ar = tr + kDr[d], ac = tc + kDc[d];
    bool is_agent_cell = (ar == s.agent_r && ac == s.agent_c);
    if (!is_agent_cell && !s.passable(ar, ac)) continue;
    int dd = dist[static_cast<std::size_t>(ar) * s.cols + ac];
    if (dd < 0) continue;
    if (best_d < 0 || dd < best_d) {
      best_d = dd;
      best_r = ar;
      best_c = ac;
      face = (d + 2) & 3;  // face back toward the target
    }
  }
  ETCLIP_CHECK(best_d >= 0, "planning error: target cell (" +
                                std::to_string(tr) + "," + std::to_string(tc) +
                                ") unreachable");
  // reconstruct cell path by walking the distance field backwards
  std::vector<std::pair<int, int>> path;
  int r = best_r, c = best_c;
  path.emplace_back(r, c);
  while (!(r == s.agent_r && c == s.agent_c)) {
    int dcur = dist[static_cast<std::size_t>(r) * s.cols + c];
    for (int d = 0; d < 4; ++d) {
      int pr = r + kDr[d], pc = c + kDc[d];
      if (!s.in_bounds(pr, pc)) continue;
      int pd = dist[static_cast<std::size_t>(pr) * s.cols + pc];
      if (pd == dcur - 1 &&
          ((pr == s.agent_r && pc == s.agent_c) || s.passable(pr, pc))) {
        r = pr;
        c = pc;
        path.emplace_back(r, c);
        break;
      }
    }
  }
  std::reverse(path.begin(), path.end());
  std::vector<int> actions;
  int dir = s.agent_dir;
  for (std::size_t i = 1; i < path.size(); ++i) {
    int move_dir = -1;
    for (int d = 0; d < 4; ++d)
      if (path[i - 1].first + kDr[d] == path[i].first &&
          path[i - 1].second + kDc[d] == path[i].second)
        move_dir = d;
    emit_turns(dir, move_dir, actions);
    dir = move_dir;
    actions.push_back(kForward);
  }
  emit_turns(dir, face, actions);
  return actions;
}

// ---- tasks ----

struct Task {
  enum Type { kPickupTask, kBringTask, kToggleTask, kPickupToggleTask };
  Type type = kPickupTask;
  int obj = -1;       // primary object index
  int landmark = -1;  // bring: landmark object; pickup_toggle: toggle target
  int dest_r = -1, dest_c = -1;  // bring destination cell
};

inline std::vector<GoalCond> task_goals(const Scene& s, const Task& t) {
  std::vector<GoalCond> g;
  switch (t.type) {
    case Task::kPickupTask:
      g.push_back({GoalCond::kHolding, s.objects[t.obj].class_id, -1, -1});
      break;
    case Task::kBringTask:
      g.push_back(
          {GoalCond::kObjectAt, s.objects[t.obj].class_id, t.dest_r, t.dest_c});
      break;
    case Task::kToggleTask:
      g.push_back({GoalCond::kToggled, s.objects[t.obj].class_id, -1, -1});
      break;
    case Task::kPickupToggleTask:
      g.push_back({GoalCond::kHolding, s.objects[t.obj].class_id, -1, -1});
      g.push_back(
          {GoalCond::kToggled, s.objects[t.landmark].class_id, -1, -1});
      break;
  }
  return g;
}

struct ExpertPlan {
  std::vector<int> actions;
  std::vector<int> gold_objects;  // none_class() at non-interaction steps
};

// Replans from the simulated state leg by leg so held objects unblock
// their cells correctly.
inline ExpertPlan plan_expert(const Scene& scene, const Task& task) {
  ExpertPlan plan;
  SimState st(scene);
  auto run_leg = [&](const std::vector<int>& nav, int interact, int gold) {
    for (int a : nav) {
      plan.actions.push_back(a);
      plan.gold_objects.push_back(none_class());
      st.step(a, none_class());
    }
    if (interact >= 0) {
      plan.actions.push_back(interact);
      plan.gold_objects.push_back(gold);
      st.step(interact, gold);
    }
  };
  auto goto_object = [&](int oi, int interact) {
    const ObjectSpec& o = st.scene.objects[oi];
    auto nav = plan_navigation(st, o.r, o.c);
    run_leg(nav, interact, o.class_id);
  };
  switch (task.type) {
    case Task::kPickupTask:
      goto_object(task.obj, kPickup);
      break;
    case Task::kBringTask: {
      goto_object(task.obj, kPickup);
      auto nav = plan_navigation(st, task.dest_r, task.dest_c);
      run_leg(nav, kPut, scene.objects[task.obj].class_id);
      break;
    }
    case Task::kToggleTask:
      goto_object(task.obj, kToggle);
      break;
    case Task::kPickupToggleTask:
      goto_object(task.obj, kPickup);
      goto_object(task.landmark, kToggle);
      break;
  }
  plan.actions.push_back(kStop);
  plan.gold_objects.push_back(none_class());
  // verify the expert actually satisfies the goals
  for (auto& g : task_goals(scene, task))
    ETCLIP_CHECK(st.satisfied(g), "planning error: expert does not satisfy a "
                                  "goal condition");
  return plan;
}

// ---- instructions ----

struct InstrResult {
  std::vector<std::string> tokens;
  bool object_properties = false;
};

inline void push_mention(std::vector<std::string>& out, const ObjectSpec& o,
                         bool with_color, bool* flag) {
  out.push_back("the");
  if (with_color) {
    out.push_back(color_palette()[o.color].first);
    if (flag) *flag = true;
  }
  out.push_back(object_classes()[o.class_id].name);
}

inline InstrResult generate_instruction(const Scene& s, const Task& t,
                                        std::uint64_t seed,
                                        double modifier_prob) {
  Rng rng(seed, 17);
  InstrResult res;
  auto& tk = res.tokens;
  bool c1 = rng.bernoulli(modifier_prob);
  bool c2 = rng.bernoulli(modifier_prob);
  int variant = rng.uniform_int(2);
  switch (t.type) {
    case Task::kPickupTask:
      if (variant == 0) {
        tk = {"pick", "up"};
        push_mention(tk, s.objects[t.obj], c1, &res.object_properties);
      } else {
        tk = {"go", "to"};
        push_mention(tk, s.objects[t.obj], c1, &res.object_properties);
        tk.insert(tk.end(), {"and", "pick", "it", "up"});
      }
      break;
    case Task::kBringTask:
      tk = {"bring"};
      push_mention(tk, s.objects[t.obj], c1, &res.object_properties);
      tk.push_back("to");
      push_mention(tk, s.objects[t.landmark], c2, &res.object_properties);
      break;
    case Task::kToggleTask:
      if (variant == 0) {
        tk = {"turn", "on"};
        push_mention(tk, s.objects[t.obj], c1, &res.object_properties);
      } else {
        tk = {"walk", "to"};
        push_mention(tk, s.objects[t.obj], c1, &res.object_properties);
        tk.insert(tk.end(), {"and", "turn", "it", "on"});
      }
      break;
    case Task::kPickupToggleTask:
      tk = {"pick", "up"};
      push_mention(tk, s.objects[t.obj], c1, &res.object_properties);
      tk.push_back("then");
      tk.insert(tk.end(), {"turn", "on"});
      push_mention(tk, s.objects[t.landmark], c2, &res.object_properties);
      break;
  }
  return res;
}

// ---- episode ----

struct Episode {
  std::string episode_id;
  Scene scene;
  std::vector<std::string> instruction;
  std::vector<std::vector<float>> frames;
  std::vector<int> expert_actions;
  std::vector<int> gold_objects;
  std::vector<GoalCond> goal_conditions;
  bool flag_object_properties = false;
  bool flag_small_objects = false;
  bool flag_rare_semantics = false;
};

struct WorldgenConfig {
  int n_train = 2000;
  int n_valid_seen = 200;
  int n_valid_unseen = 300;
  int grid = 8;
  int cell_px = 2;
  int min_objects = 3;
  int max_objects = 5;
  int wall_segments = 2;
  double modifier_prob = 0.5;
  int rare_train_count = 18;   // per alias, must stay within [1, 29]
  double rare_valid_frac = 0.12;
  int n_caption_pairs = 6000;
  int n_probe = 500;
};

// ---- scene generation ----

inline Scene generate_scene(std::uint64_t seed, int palette_id, int difficulty,
                            const WorldgenConfig& cfg = {}) {
  ETCLIP_CHECK(palette_id >= 0 &&
                   palette_id < static_cast<int>(scene_palettes().size()),
               "invalid palette id " + std::to_string(palette_id));
  Rng rng(seed, 23);
  const int small_pool[] = {0, 1, 2, 3};
  const int large_pool[] = {4, 5, 6, 7, 8, 9};
  for (int attempt = 0; attempt < 200; ++attempt) {
    Scene s;
    s.rows = s.cols = cfg.grid;
    s.palette_id = palette_id;
    s.walls.assign(static_cast<std::size_t>(s.rows) * s.cols, 0);
    int n_obj;
    if (difficulty == 0) {
      n_obj = 2;
    } else {
      n_obj = cfg.min_objects +
              rng.uniform_int(cfg.max_objects - cfg.min_objects + 1);
      for (int seg = 0; seg < cfg.wall_segments; ++seg) {
        int len = 2 + rng.uniform_int(2);
        bool horiz = rng.bernoulli(0.5);
        int r = 1 + rng.uniform_int(s.rows - 2);
        int c = 1 + rng.uniform_int(s.cols - 2);
        for (int i = 0; i < len; ++i) {
          int rr = horiz ? r : r + i;
          int cc = horiz ? c + i : c;
          if (rr >= 1 && rr < s.rows - 1 && cc >= 1 && cc < s.cols - 1)
            s.walls[static_cast<std::size_t>(rr) * s.cols + cc] = 1;
        }
      }
    }
    // classes: guarantee one small, one large, one toggleable
    std::vector<int> classes;
    classes.push_back(small_pool[rng.uniform_int(4)]);
    classes.push_back(large_pool[rng.uniform_int(6)]);
    if (n_obj > 2) classes.push_back(rng.bernoulli(0.5) ? 7 : 8);
    while (static_cast<int>(classes.size()) < n_obj)
      classes.push_back(rng.uniform_int(none_class()));
    // placement: Chebyshev distance >= 2 between objects, large glyphs
    // stay off the border so the 3x3 footprint never clips
    bool ok = true;
    for (int ci : classes) {
      bool small = object_classes()[ci].small;
      bool placed = false;
      for (int t = 0; t < 100 && !placed; ++t) {
        int lo = small ? 0 : 1;
        int hi_r = small ? s.rows : s.rows - 1;
        int r = lo + rng.uniform_int(hi_r - lo);
        int c = lo + rng.uniform_int(hi_r - lo);
        if (s.wall_at(r, c)) continue;
        bool clash = false;
        for (auto& o : s.objects)
          if (std::abs(o.r - r) <= 1 && std::abs(o.c - c) <= 1) clash = true;
        if (clash) continue;
        s.objects.push_back({ci, rng.uniform_int(num_colors()), r, c, false});
        placed = true;
      }
      if (!placed) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    // agent start on a free cell
    bool agent_ok = false;
    for (int t = 0; t < 100 && !agent_ok; ++t) {
      int r = rng.uniform_int(s.rows), c = rng.uniform_int(s.cols);
      if (s.passable(r, c)) {
        s.agent_r = r;
        s.agent_c = c;
        s.agent_dir = rng.uniform_int(4);
        agent_ok = true;
      }
    }
    if (!agent_ok) continue;
    // connectivity: every object adjacent-reachable from the agent start
    auto dist = bfs_dist(s, s.agent_r, s.agent_c);
    bool reachable = true;
    for (auto& o : s.objects) {
      bool adj = false;
      for (int d = 0; d < 4; ++d) {
        int ar = o.r + kDr[d], ac = o.c + kDc[d];
        bool agent_cell = ar == s.agent_r && ac == s.agent_c;
        if ((agent_cell || s.passable(ar, ac)) &&
            dist[static_cast<std::size_t>(ar) * s.cols + ac] >= 0)
          adj = true;
      }
      if (!adj) reachable = false;
    }
    if (!reachable) continue;
    return s;
  }
  detail::fail("generation error: unsatisfiable scene placement");
}

// Pick a task achievable in the scene. Returns false if none fits.
inline bool sample_task(const Scene& s, Rng& rng, Task* out) {
  std::vector<int> toggleables, others;
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    if (object_classes()[s.objects[i].class_id].toggleable)
      toggleables.push_back(static_cast<int>(i));
    else
      others.push_back(static_cast<int>(i));
  }
  for (int attempt = 0; attempt < 40; ++attempt) {
    Task t;
    int pick = rng.uniform_int(4);
    t.type = static_cast<Task::Type>(pick);
    int n = static_cast<int>(s.objects.size());
    switch (t.type) {
      case Task::kPickupTask:
        t.obj = rng.uniform_int(n);
        break;
      case Task::kBringTask: {
        if (n < 2) continue;
        t.obj = rng.uniform_int(n);
        do {
          t.landmark = rng.uniform_int(n);
        } while (t.landmark == t.obj);
        const ObjectSpec& y = s.objects[t.landmark];
        // destination: a passable cell adjacent to the landmark
        bool found = false;
        for (int d = 0; d < 4 && !found; ++d) {
          int r = y.r + kDr[d], c = y.c + kDc[d];
          if (s.passable(r, c) && !(r == s.agent_r && c == s.agent_c)) {
            // the put requires a passable stand cell next to dest
            for (int d2 = 0; d2 < 4; ++d2) {
              int sr = r + kDr[d2], sc = c + kDc[d2];
              if (s.passable(sr, sc) ||
                  (sr == s.agent_r && sc == s.agent_c)) {
                t.dest_r = r;
                t.dest_c = c;
                found = true;
                break;
              }
            }
          }
        }
        if (!found) continue;
        break;
      }
      case Task::kToggleTask:
        if (toggleables.empty()) continue;
        t.obj = toggleables[rng.uniform_int(
            static_cast<int>(toggleables.size()))];
        break;
      case Task::kPickupToggleTask: {
        if (toggleables.empty()) continue;
        std::vector<int> pickable = others;
        if (pickable.empty()) continue;
        t.obj =
            pickable[rng.uniform_int(static_cast<int>(pickable.size()))];
        t.landmark = toggleables[rng.uniform_int(
            static_cast<int>(toggleables.size()))];
        break;
      }
    }
    *out = t;
    return true;
  }
  return false;
}

inline Episode generate_episode(std::uint64_t master_seed, std::uint64_t index,
                                const std::string& id, int palette_id,
                                const WorldgenConfig& cfg) {
  std::uint64_t seed = master_seed ^ (index * 0x9e3779b97f4a7c15ULL + 0x5bull);
  for (int attempt = 0; attempt < 50; ++attempt) {
    std::uint64_t s2 = seed + static_cast<std::uint64_t>(attempt) * 1000003ULL;
    Scene scene = generate_scene(s2, palette_id, 1, cfg);
    Rng trng(s2, 31);
    Task task;
    if (!sample_task(scene, trng, &task)) continue;
    ExpertPlan plan;
    try {
      plan = plan_expert(scene, task);
    } catch (const Error&) {
      continue;
    }
    Episode ep;
    ep.episode_id = id;
    ep.scene = scene;
    auto instr = generate_instruction(scene, task, s2, cfg.modifier_prob);
    ep.instruction = instr.tokens;
    ep.flag_object_properties = instr.object_properties;
    ep.expert_actions = plan.actions;
    ep.gold_objects = plan.gold_objects;
    ep.goal_conditions = task_goals(scene, task);
    for (int g : ep.gold_objects)
      if (g != none_class() && object_classes()[g].small)
        ep.flag_small_objects = true;
    // frames: observation before each action
    SimState st(scene);
    for (std::size_t t = 0; t < plan.actions.size(); ++t) {
      ep.frames.push_back(render_frame(st.scene, true, cfg.cell_px));
      st.step(plan.actions[t], plan.gold_objects[t]);
    }
    return ep;
  }
  detail::fail("generation error: no achievable task for episode " + id);
}

// ---- token vocabulary ----

inline const std::vector<std::string>& token_vocab() {
  static std::vector<std::string> v = [] {
    std::vector<std::string> t = {"a",    "and", "bring", "go",  "it",
                                  "none", "on",  "pick",  "the", "then",
                                  "to",   "turn", "up",   "walk"};
    for (auto& c : color_palette()) t.push_back(c.first);
    for (auto& o : object_classes())
      if (o.name != "none") t.push_back(o.name);
    for (auto& [base, alias] : rare_aliases()) t.push_back(alias);
    return t;
  }();
  return v;
}

inline int token_id(const std::string& tok) {
  const auto& v = token_vocab();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] == tok) return static_cast<int>(i);
  detail::fail("token not in vocabulary: " + tok);
}

inline std::vector<int> tokens_to_ids(const std::vector<std::string>& toks) {
  std::vector<int> ids;
  ids.reserve(toks.size());
  for (auto& t : toks) ids.push_back(token_id(t));
  return ids;
}

// ---- captions ----

struct CaptionPair {
  std::vector<float> frame;
  std::vector<std::string> caption;
};

// Each mention is either "a <color> <noun>" or a bare "<noun>"; bare
// mentions keep zero-shot class prompts inside the training distribution.
inline std::vector<std::string> caption_for(const Scene& s,
                                            const std::vector<int>& objs,
                                            Rng& rng, double bare_prob = 0.5) {
  if (objs.empty()) return {"none"};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < objs.size(); ++i) {
    if (i) out.push_back("and");
    const ObjectSpec& o = s.objects[objs[i]];
    if (!rng.bernoulli(bare_prob)) {
      out.push_back("a");
      out.push_back(color_palette()[o.color].first);
    }
    out.push_back(object_classes()[o.class_id].name);
  }
  return out;
}

inline std::vector<CaptionPair> build_caption_pairs(
    const std::vector<Episode>& train, std::uint64_t seed, int n_pairs,
    int cell_px = 2) {
  ETCLIP_CHECK(!train.empty(), "caption corpus requires train episodes");
  Rng rng(seed, 41);
  std::vector<CaptionPair> out;
  out.reserve(n_pairs);
  for (int i = 0; i < n_pairs; ++i) {
    const Episode& ep = train[rng.uniform_int(static_cast<int>(train.size()))];
    const Scene& s = ep.scene;
    int n = static_cast<int>(s.objects.size());
    double mode = rng.uniform();
    std::vector<int> subset;
    if (mode < 0.50) {
      subset = {rng.uniform_int(n)};
    } else if (mode < 0.90) {
      int k = 2 + rng.uniform_int(std::max(1, n - 1));
      if (k > n) k = n;
      std::vector<int> all;
      for (int j = 0; j < n; ++j) all.push_back(j);
      for (int j = 0; j < k; ++j) {
        int pick = j + rng.uniform_int(n - j);
        std::swap(all[j], all[pick]);
      }
      subset.assign(all.begin(), all.begin() + k);
    }  // else empty -> "none"
    // clean canvas: walls and the agent marker carry no caption words
    Scene sc = s;
    std::fill(sc.walls.begin(), sc.walls.end(), 0);
    CaptionPair p;
    p.frame = render_objects(sc, subset, false, cell_px);
    p.caption = caption_for(s, subset, rng);
    out.push_back(std::move(p));
  }
  return out;
}

struct ProbeFrame {
  std::vector<float> frame;
  int label = 0;
};

// Held-out single-object frames (train palettes, fresh seed stream).
inline std::vector<ProbeFrame> build_probe_set(std::uint64_t seed, int n,
                                               const WorldgenConfig& cfg) {
  Rng rng(seed, 53);
  std::vector<ProbeFrame> out;
  out.reserve(n);
  int n_classes = none_class();
  for (int i = 0; i < n; ++i) {
    int cls = i % n_classes;
    Scene s;
    s.rows = s.cols = cfg.grid;
    s.walls.assign(static_cast<std::size_t>(s.rows) * s.cols, 0);
    s.palette_id =
        train_palettes()[rng.uniform_int(static_cast<int>(train_palettes().size()))];
    bool small = object_classes()[cls].small;
    int lo = small ? 0 : 1;
    int hi = small ? s.rows : s.rows - 1;
    int r = lo + rng.uniform_int(hi - lo);
    int c = lo + rng.uniform_int(hi - lo);
    s.objects.push_back({cls, rng.uniform_int(num_colors()), r, c, false});
    do {
      s.agent_r = rng.uniform_int(s.rows);
      s.agent_c = rng.uniform_int(s.cols);
    } while (s.agent_r == r && s.agent_c == c);
    s.agent_dir = rng.uniform_int(4);
    out.push_back({render_frame(s, false, cfg.cell_px), cls});
  }
  return out;
}

// ---- JSON (de)serialization ----

using nlohmann::json;

inline json scene_to_json(const Scene& s) {
  json j;
  j["rows"] = s.rows;
  j["cols"] = s.cols;
  j["palette_id"] = s.palette_id;
  std::vector<std::vector<int>> walls;
  for (int r = 0; r < s.rows; ++r)
    for (int c = 0; c < s.cols; ++c)
      if (s.wall_at(r, c)) walls.push_back({r, c});
  j["walls"] = walls;
  j["agent"] = {{"r", s.agent_r}, {"c", s.agent_c}, {"dir", s.agent_dir}};
  json objs = json::array();
  for (auto& o : s.objects)
    objs.push_back({{"class", object_classes()[o.class_id].name},
                    {"color", color_palette()[o.color].first},
                    {"r", o.r},
                    {"c", o.c},
                    {"toggled", o.toggled}});
  j["objects"] = objs;
  return j;
}

inline Scene scene_from_json(const json& j) {
  Scene s;
  s.rows = j.at("rows");
  s.cols = j.at("cols");
  s.palette_id = j.at("palette_id");
  s.walls.assign(static_cast<std::size_t>(s.rows) * s.cols, 0);
  for (auto& w : j.at("walls"))
    s.walls[static_cast<std::size_t>(w[0].get<int>()) * s.cols +
            w[1].get<int>()] = 1;
  s.agent_r = j.at("agent").at("r");
  s.agent_c = j.at("agent").at("c");
  s.agent_dir = j.at("agent").at("dir");
  for (auto& oj : j.at("objects")) {
    ObjectSpec o;
    o.class_id = object_class_id(oj.at("class"));
    const auto& cp = color_palette();
    o.color = -1;
    for (std::size_t i = 0; i < cp.size(); ++i)
      if (cp[i].first == oj.at("color")) o.color = static_cast<int>(i);
    ETCLIP_CHECK(o.color >= 0, "unknown color in scene json");
    o.r = oj.at("r");
    o.c = oj.at("c");
    o.toggled = oj.at("toggled");
    s.objects.push_back(o);
  }
  return s;
}

inline json goal_to_json(const GoalCond& g) {
  static const char* kinds[] = {"holding", "object_at", "toggled"};
  json j;
  j["kind"] = kinds[g.kind];
  j["class"] = object_classes()[g.class_id].name;
  if (g.kind == GoalCond::kObjectAt) {
    j["r"] = g.r;
    j["c"] = g.c;
  }
  return j;
}

inline GoalCond goal_from_json(const json& j) {
  GoalCond g;
  std::string k = j.at("kind");
  if (k == "holding") g.kind = GoalCond::kHolding;
  else if (k == "object_at") g.kind = GoalCond::kObjectAt;
  else if (k == "toggled") g.kind = GoalCond::kToggled;
  else detail::fail("unknown goal kind: " + k);
  g.class_id = object_class_id(j.at("class"));
  if (g.kind == GoalCond::kObjectAt) {
    g.r = j.at("r");
    g.c = j.at("c");
  }
  return g;
}

inline json episode_to_json(const Episode& ep) {
  json j;
  j["episode_id"] = ep.episode_id;
  j["scene"] = scene_to_json(ep.scene);
  j["instruction"] = ep.instruction;
  json frames = json::array();
  for (auto& f : ep.frames) frames.push_back(base64_encode(frame_to_u8(f)));
  j["frames"] = frames;
  j["actions"] = ep.expert_actions;
  j["gold_objects"] = ep.gold_objects;
  json goals = json::array();
  for (auto& g : ep.goal_conditions) goals.push_back(goal_to_json(g));
  j["goal_conditions"] = goals;
  j["flags"] = {{"object_properties", ep.flag_object_properties},
                {"small_objects", ep.flag_small_objects},
                {"rare_semantics", ep.flag_rare_semantics}};
  return j;
}

inline Episode episode_from_json(const json& j) {
  Episode ep;
  ep.episode_id = j.at("episode_id");
  ep.scene = scene_from_json(j.at("scene"));
  ep.instruction = j.at("instruction").get<std::vector<std::string>>();
  for (auto& f : j.at("frames"))
    ep.frames.push_back(frame_from_u8(base64_decode(f)));
  ep.expert_actions = j.at("actions").get<std::vector<int>>();
  ep.gold_objects = j.at("gold_objects").get<std::vector<int>>();
  for (auto& g : j.at("goal_conditions"))
    ep.goal_conditions.push_back(goal_from_json(g));
  ep.flag_object_properties = j.at("flags").at("object_properties");
  ep.flag_small_objects = j.at("flags").at("small_objects");
  ep.flag_rare_semantics = j.at("flags").at("rare_semantics");
  return ep;
}

// ---- dataset build ----

struct Dataset {
  std::vector<Episode> train, valid_seen, valid_unseen;
  std::vector<std::string> vocab;
  std::map<std::string, long> freq;  // train token counts
  std::vector<CaptionPair> captions;
  std::vector<ProbeFrame> probe;
};

inline std::map<std::string, long> count_tokens(
    const std::vector<Episode>& eps) {
  std::map<std::string, long> freq;
  for (auto& ep : eps)
    for (auto& t : ep.instruction) ++freq[t];
  return freq;
}

// Substitutes rare aliases at controlled frequencies, then recomputes the
// frequency table and the rare flag for every split against it.
inline void apply_rare_aliases(Dataset* ds, std::uint64_t seed,
                               const WorldgenConfig& cfg) {
  Rng rng(seed, 61);
  auto substitute = [](Episode& ep, const std::string& base,
                       const std::string& alias) {
    for (auto& t : ep.instruction)
      if (t == base) t = alias;
  };
  for (auto& [base, alias] : rare_aliases()) {
    // train: exactly min(rare_train_count, available) substitutions
    std::vector<int> candidates;
    for (std::size_t i = 0; i < ds->train.size(); ++i)
      for (auto& t : ds->train[i].instruction)
        if (t == base) {
          candidates.push_back(static_cast<int>(i));
          break;
        }
    int k = std::min<int>(cfg.rare_train_count,
                          static_cast<int>(candidates.size()));
    for (int i = 0; i < k; ++i) {
      int pick = i + rng.uniform_int(static_cast<int>(candidates.size()) - i);
      std::swap(candidates[i], candidates[pick]);
      substitute(ds->train[candidates[i]], base, alias);
    }
    // valid splits: a fixed fraction of mentioning episodes
    for (auto* split : {&ds->valid_seen, &ds->valid_unseen}) {
      std::vector<int> vc;
      for (std::size_t i = 0; i < split->size(); ++i)
        for (auto& t : (*split)[i].instruction)
          if (t == base) {
            vc.push_back(static_cast<int>(i));
            break;
          }
      int kv = std::max<int>(
          vc.empty() ? 0 : 1,
          static_cast<int>(cfg.rare_valid_frac * static_cast<double>(vc.size())));
      kv = std::min<int>(kv, static_cast<int>(vc.size()));
      for (int i = 0; i < kv; ++i) {
        int pick = i + rng.uniform_int(static_cast<int>(vc.size()) - i);
        std::swap(vc[i], vc[pick]);
        substitute((*split)[vc[i]], base, alias);
      }
    }
  }
  ds->freq = count_tokens(ds->train);
  for (auto* split : {&ds->train, &ds->valid_seen, &ds->valid_unseen})
    for (auto& ep : *split) {
      ep.flag_rare_semantics = false;
      for (auto& t : ep.instruction) {
        auto it = ds->freq.find(t);
        long count = it == ds->freq.end() ? 0 : it->second;
        if (count < 30) ep.flag_rare_semantics = true;
      }
    }
}

inline Dataset generate_dataset(const WorldgenConfig& cfg,
                                std::uint64_t seed) {
  Dataset ds;
  ds.vocab = token_vocab();
  auto gen_split = [&](int n, const std::vector<int>& palettes,
                       const std::string& prefix, std::uint64_t salt,
                       std::vector<Episode>* out,
                       const std::set<std::uint64_t>* forbidden_walls,
                       std::set<std::uint64_t>* record_walls) {
    Rng prng(seed ^ salt, 71);
    for (int i = 0; i < n; ++i) {
      int palette =
          palettes[prng.uniform_int(static_cast<int>(palettes.size()))];
      char idbuf[64];
      std::snprintf(idbuf, sizeof(idbuf), "%s_%06d", prefix.c_str(), i);
      std::uint64_t idx = salt * 1000000ULL + static_cast<std::uint64_t>(i);
      for (int retry = 0;; ++retry) {
        ETCLIP_CHECK(retry < 60, "generation error: cannot produce a wall "
                                 "layout disjoint from train");
        Episode ep = generate_episode(
            seed, idx + static_cast<std::uint64_t>(retry) * 7777777ULL, idbuf,
            palette, cfg);
        std::uint64_t wh = wall_layout_hash(ep.scene);
        if (forbidden_walls && forbidden_walls->count(wh)) continue;
        if (record_walls) record_walls->insert(wh);
        out->push_back(std::move(ep));
        break;
      }
    }
  };
  std::set<std::uint64_t> train_walls;
  gen_split(cfg.n_train, train_palettes(), "train", 1, &ds.train, nullptr,
            &train_walls);
  gen_split(cfg.n_valid_seen, train_palettes(), "valid_seen", 2,
            &ds.valid_seen, nullptr, nullptr);
  gen_split(cfg.n_valid_unseen, unseen_palettes(), "valid_unseen", 3,
            &ds.valid_unseen, &train_walls, nullptr);
  apply_rare_aliases(&ds, seed, cfg);
  ds.captions = build_caption_pairs(ds.train, seed, cfg.n_caption_pairs,
                                    cfg.cell_px);
  ds.probe = build_probe_set(seed, cfg.n_probe, cfg);
  return ds;
}

// ---- file IO ----

inline void write_episodes(const std::vector<Episode>& eps,
                           const std::string& path) {
  std::ofstream out(path);
  ETCLIP_CHECK(out.good(), "cannot open for writing: " + path);
  for (auto& ep : eps) out << episode_to_json(ep).dump() << "\n";
  ETCLIP_CHECK(out.good(), "write failure: " + path);
}

inline std::vector<Episode> read_episodes(const std::string& path) {
  std::ifstream in(path);
  ETCLIP_CHECK(in.good(), "cannot open: " + path);
  std::vector<Episode> eps;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    eps.push_back(episode_from_json(json::parse(line)));
  }
  return eps;
}

inline void write_dataset(const Dataset& ds, const std::string& dir) {
  write_episodes(ds.train, dir + "/train.jsonl");
  write_episodes(ds.valid_seen, dir + "/valid_seen.jsonl");
  write_episodes(ds.valid_unseen, dir + "/valid_unseen.jsonl");
  {
    std::ofstream out(dir + "/vocab.txt");
    ETCLIP_CHECK(out.good(), "cannot open for writing: " + dir + "/vocab.txt");
    for (auto& t : ds.vocab) out << t << "\n";
  }
  {
    // token TAB count, sorted by count descending (ties: token ascending)
    std::vector<std::pair<std::string, long>> rows(ds.freq.begin(),
                                                   ds.freq.end());
    std::sort(rows.begin(), rows.end(), [](auto& a, auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    std::ofstream out(dir + "/freq.tsv");
    ETCLIP_CHECK(out.good(), "cannot open for writing: " + dir + "/freq.tsv");
    for (auto& [tok, cnt] : rows) out << tok << "\t" << cnt << "\n";
  }
  {
    std::ofstream out(dir + "/captions.jsonl");
    ETCLIP_CHECK(out.good(),
                 "cannot open for writing: " + dir + "/captions.jsonl");
    for (auto& p : ds.captions) {
      json j;
      j["frame"] = base64_encode(frame_to_u8(p.frame));
      j["caption"] = p.caption;
      out << j.dump() << "\n";
    }
  }
  {
    std::ofstream out(dir + "/probe.jsonl");
    ETCLIP_CHECK(out.good(),
                 "cannot open for writing: " + dir + "/probe.jsonl");
    for (auto& p : ds.probe) {
      json j;
      j["frame"] = base64_encode(frame_to_u8(p.frame));
      j["label"] = p.label;
      out << j.dump() << "\n";
    }
  }
}

inline Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  ds.train = read_episodes(dir + "/train.jsonl");
  ds.valid_seen = read_episodes(dir + "/valid_seen.jsonl");
  ds.valid_unseen = read_episodes(dir + "/valid_unseen.jsonl");
  {
    std::ifstream in(dir + "/vocab.txt");
    ETCLIP_CHECK(in.good(), "cannot open: " + dir + "/vocab.txt");
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) ds.vocab.push_back(line);
  }
  {
    std::ifstream in(dir + "/freq.tsv");
    ETCLIP_CHECK(in.good(), "cannot open: " + dir + "/freq.tsv");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto tab = line.find('\t');
      ETCLIP_CHECK(tab != std::string::npos, "malformed freq.tsv line");
      ds.freq[line.substr(0, tab)] = std::stol(line.substr(tab + 1));
    }
  }
  {
    std::ifstream in(dir + "/captions.jsonl");
    ETCLIP_CHECK(in.good(), "cannot open: " + dir + "/captions.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j = json::parse(line);
      CaptionPair p;
      p.frame = frame_from_u8(base64_decode(j.at("frame")));
      p.caption = j.at("caption").get<std::vector<std::string>>();
      ds.captions.push_back(std::move(p));
    }
  }
  {
    std::ifstream in(dir + "/probe.jsonl");
    ETCLIP_CHECK(in.good(), "cannot open: " + dir + "/probe.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j = json::parse(line);
      ds.probe.push_back(
          {frame_from_u8(base64_decode(j.at("frame"))), j.at("label")});
    }
  }
  return ds;
}

}  // namespace etclip::worldgen

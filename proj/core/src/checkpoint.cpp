#include "essa/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "essa/errors.hpp"

namespace essa {

namespace {

// ---- little-endian binary writer/reader -----------------------------------

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) bytes_.push_back((v >> (8 * i)) & 0xff);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back((v >> (8 * i)) & 0xff);
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back((v >> (8 * i)) & 0xff);
  }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void str(const std::string& s) {
    u16(static_cast<std::uint16_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void f64_span(std::span<const double> values) {
    u64(values.size());
    for (double v : values) f64(v);
  }
  std::size_t size() const { return bytes_.size(); }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::string origin)
      : bytes_(bytes), origin_(std::move(origin)) {}

  std::uint8_t u8() { return bytes_[need(1)]; }
  std::uint16_t u16() {
    const std::size_t p = need(2);
    return static_cast<std::uint16_t>(bytes_[p] | (bytes_[p + 1] << 8));
  }
  std::uint32_t u32() {
    const std::size_t p = need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | bytes_[p + i];
    return v;
  }
  std::uint64_t u64() {
    const std::size_t p = need(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | bytes_[p + i];
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    const std::uint16_t n = u16();
    const std::size_t p = need(n);
    return std::string(bytes_.begin() + static_cast<std::ptrdiff_t>(p),
                       bytes_.begin() + static_cast<std::ptrdiff_t>(p + n));
  }
  std::vector<double> f64_vec() {
    const std::uint64_t n = u64();
    std::vector<double> out(n);
    for (auto& v : out) v = f64();
    return out;
  }
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::size_t need(std::size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw DataError("checkpoint '" + origin_ + "' truncated at offset " +
                      std::to_string(pos_) + " (need " + std::to_string(n) +
                      " more bytes of " + std::to_string(bytes_.size()) + ")");
    }
    const std::size_t p = pos_;
    pos_ += n;
    return p;
  }

  const std::vector<std::uint8_t>& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---- adapter spec blob -----------------------------------------------------

void write_spec(Writer& w, const AdapterSpec& spec) {
  w.u8(static_cast<std::uint8_t>(spec.kind));
  w.u32(static_cast<std::uint32_t>(spec.lora_rank));
  w.f64(spec.lora_alpha);
  std::uint8_t target_bits = 0;
  for (LoraTarget t : spec.lora_targets)
    target_bits |= static_cast<std::uint8_t>(1u << static_cast<int>(t));
  w.u8(target_bits);
  w.u32(static_cast<std::uint32_t>(spec.vpt_prompts));
  w.u8(spec.vpt_mode == VptMode::deep ? 1 : 0);
  w.f64(spec.apla_fraction);
  w.u64(spec.apla_seed);
}

AdapterSpec read_spec(Reader& r) {
  AdapterSpec spec;
  spec.kind = static_cast<AdapterKind>(r.u8());
  spec.lora_rank = r.u32();
  spec.lora_alpha = r.f64();
  const std::uint8_t target_bits = r.u8();
  spec.lora_targets.clear();
  for (int t = 0; t < 4; ++t) {
    if (target_bits & (1u << t)) {
      spec.lora_targets.insert(static_cast<LoraTarget>(t));
    }
  }
  spec.vpt_prompts = r.u32();
  spec.vpt_mode = r.u8() ? VptMode::deep : VptMode::shallow;
  spec.apla_fraction = r.f64();
  spec.apla_seed = r.u64();
  return spec;
}

void write_tree(Writer& w, const ParamTree& tree) {
  w.u32(static_cast<std::uint32_t>(tree.size()));
  for (const auto& name : tree.names()) {
    w.str(name);
    w.f64_span(tree.at(name).data());
  }
}

// Reads a serialized tree; shapes come from a sibling tree with identical
// structure (the student trees restored from the manifest).
ParamTree read_tree_like(Reader& r, const ParamTree& shapes,
                         const std::string& what) {
  const std::uint32_t count = r.u32();
  if (count != shapes.size()) {
    throw DataError("checkpoint: " + what + " has " + std::to_string(count) +
                    " entries, expected " + std::to_string(shapes.size()));
  }
  ParamTree tree;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    std::vector<double> values = r.f64_vec();
    if (!shapes.has(name) || shapes.at(name).numel() != values.size()) {
      throw DataError("checkpoint: " + what + " entry '" + name +
                      "' does not match the model");
    }
    tree.add(name, Tensor::from_data(shapes.at(name).shape(),
                                     std::move(values)));
  }
  return tree;
}

bool is_injected_name(const std::string& name) {
  return name.find(".lora.") != std::string::npos ||
         name.rfind("prompts", 0) == 0;
}

bool is_dino_head_name(const std::string& name) {
  return name.rfind("dino_head.", 0) == 0;
}

bool is_prediction_head_name(const std::string& name) {
  return name.rfind("head.", 0) == 0;
}

}  // namespace

void save_checkpoint(const RunState& state,
                     const std::filesystem::path& path) {
  // Manifest order: backbone, injected, dino head, prediction head.
  std::vector<const ParamTree*> sections = {&state.backbone, &state.injected};
  if (state.dino_head) sections.push_back(&state.dino_head->params);
  if (state.head) sections.push_back(&state.head->params);

  Writer w;
  w.u8('E');
  w.u8('S');
  w.u8('C');
  w.u8('K');
  w.u16(kCheckpointFormatVersion);

  std::size_t entry_count = 0;
  for (const ParamTree* tree : sections) entry_count += tree->size();
  w.u32(static_cast<std::uint32_t>(entry_count));
  for (const ParamTree* tree : sections) {
    for (const auto& name : tree->names()) {
      const Tensor& t = tree->at(name);
      w.str(name);
      w.u8(static_cast<std::uint8_t>(t.rank()));
      for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    }
  }

  Writer payload;
  for (const ParamTree* tree : sections) {
    for (const auto& name : tree->names()) {
      for (double v : tree->at(name).data())
        payload.f32(static_cast<float>(v));
    }
  }
  const std::uint64_t checksum = fnv1a64(payload.bytes());
  for (std::uint8_t b : payload.bytes()) w.u8(b);
  w.u64(checksum);

  // Resume section.
  w.str(state.preset);
  w.u32(static_cast<std::uint32_t>(state.config.image_size));
  w.u32(static_cast<std::uint32_t>(state.config.patch_size));
  w.u32(static_cast<std::uint32_t>(state.config.channels));
  w.u32(static_cast<std::uint32_t>(state.config.embed_dim));
  w.u32(static_cast<std::uint32_t>(state.config.depth));
  w.u32(static_cast<std::uint32_t>(state.config.num_heads));
  w.u32(static_cast<std::uint32_t>(state.config.mlp_ratio));
  w.u32(static_cast<std::uint32_t>(state.config.num_registers));
  w.u8(static_cast<std::uint8_t>(state.stage));
  w.u8(state.completed ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(state.epoch));
  w.str(state.stage_adapter);
  write_spec(w, state.injection_spec);

  w.u8(state.teacher ? 1 : 0);
  if (state.teacher) {
    write_tree(w, state.teacher->backbone);
    write_tree(w, state.teacher->injected);
    write_tree(w, state.teacher->head);
    w.f64_span(state.teacher->center.data());
    w.f64(state.teacher->momentum);
    w.f64(state.teacher->center_momentum);
    w.f64(state.teacher->tau_student);
    w.f64(state.teacher->tau_teacher);
  }

  w.u8(state.optimizer ? 1 : 0);
  if (state.optimizer) {
    const auto& snap = *state.optimizer;
    w.f64(snap.config.base_lr);
    w.f64(snap.config.beta1);
    w.f64(snap.config.beta2);
    w.f64(snap.config.eps);
    w.f64(snap.config.weight_decay);
    w.u32(static_cast<std::uint32_t>(snap.config.warmup_epochs));
    w.u32(static_cast<std::uint32_t>(snap.config.total_epochs));
    w.u64(static_cast<std::uint64_t>(snap.step_count));
    w.u32(static_cast<std::uint32_t>(snap.names.size()));
    for (std::size_t i = 0; i < snap.names.size(); ++i) {
      w.str(snap.names[i]);
      w.f64_span(snap.first_moments[i]);
      w.f64_span(snap.second_moments[i]);
    }
  }

  w.u32(static_cast<std::uint32_t>(state.rng_state.size()));
  for (const auto& [name, value] : state.rng_state) {
    w.str(name);
    w.u64(value);
  }

  // Exact 64-bit model values, manifest order.
  w.u8(1);
  for (const ParamTree* tree : sections) {
    for (const auto& name : tree->names()) {
      for (double v : tree->at(name).data()) w.f64(v);
    }
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) {
    throw DataError("save_checkpoint: cannot open '" + path.string() +
                    "' for writing");
  }
  file.write(reinterpret_cast<const char*>(w.bytes().data()),
             static_cast<std::streamsize>(w.size()));
  if (!file) {
    throw DataError("save_checkpoint: write failed for '" + path.string() +
                    "'");
  }
}

RunState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) {
    throw DataError("load_checkpoint: cannot open '" + path.string() + "'");
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(file)),
                                  std::istreambuf_iterator<char>());
  Reader r(bytes, path.string());

  char magic[5] = {0};
  for (int i = 0; i < 4; ++i) magic[i] = static_cast<char>(r.u8());
  if (std::string(magic) != "ESCK") {
    throw DataError("load_checkpoint: bad magic in '" + path.string() +
                    "' (expected \"ESCK\")");
  }
  const std::uint16_t version = r.u16();
  if (version != kCheckpointFormatVersion) {
    throw DataError("load_checkpoint: unsupported version " +
                    std::to_string(version));
  }

  struct Entry {
    std::string name;
    Shape shape;
  };
  const std::uint32_t entry_count = r.u32();
  std::vector<Entry> manifest(entry_count);
  std::size_t total_values = 0;
  for (auto& e : manifest) {
    e.name = r.str();
    const std::uint8_t rank = r.u8();
    e.shape.resize(rank);
    for (auto& d : e.shape) d = r.u32();
    total_values += shape_numel(e.shape);
  }

  std::vector<float> payload(total_values);
  const std::size_t payload_offset = r.offset();
  for (auto& v : payload) v = r.f32();
  const std::uint64_t stored_checksum = r.u64();
  const std::uint64_t computed_checksum = fnv1a64(
      std::span<const std::uint8_t>(bytes.data() + payload_offset,
                                    total_values * 4));
  if (stored_checksum != computed_checksum) {
    throw DataError("load_checkpoint: payload checksum mismatch in '" +
                    path.string() + "'");
  }

  RunState state;
  state.preset = r.str();
  state.config.image_size = r.u32();
  state.config.patch_size = r.u32();
  state.config.channels = r.u32();
  state.config.embed_dim = r.u32();
  state.config.depth = r.u32();
  state.config.num_heads = r.u32();
  state.config.mlp_ratio = r.u32();
  state.config.num_registers = r.u32();
  state.config.validate();
  state.stage = static_cast<Stage>(r.u8());
  state.completed = r.u8() != 0;
  state.epoch = static_cast<int>(r.u32());
  state.stage_adapter = r.str();
  state.injection_spec = read_spec(r);

  // Partition the manifest into model sections by name.
  ParamTree dino_tree, head_tree;
  std::size_t value_at = 0;
  for (const auto& e : manifest) {
    std::vector<double> values(shape_numel(e.shape));
    for (std::size_t i = 0; i < values.size(); ++i)
      values[i] = static_cast<double>(payload[value_at + i]);
    value_at += values.size();
    Tensor t = Tensor::from_data(e.shape, std::move(values));
    if (is_dino_head_name(e.name)) {
      dino_tree.add(e.name, std::move(t));
    } else if (is_prediction_head_name(e.name)) {
      head_tree.add(e.name, std::move(t));
    } else if (is_injected_name(e.name)) {
      state.injected.add(e.name, std::move(t));
    } else {
      state.backbone.add(e.name, std::move(t));
    }
  }

  // Validate the backbone against the config's schema.
  const auto schema = backbone_schema(state.config);
  if (schema.size() != state.backbone.size()) {
    throw DataError("load_checkpoint: backbone entry count mismatch");
  }
  for (const auto& [name, shape] : schema) {
    if (!state.backbone.has(name) ||
        state.backbone.at(name).shape() != shape) {
      throw DataError("load_checkpoint: backbone entry '" + name +
                      "' missing or mis-shaped");
    }
  }

  if (!dino_tree.empty()) {
    DinoHeadConfig hc;
    hc.hidden = dino_tree.at("dino_head.fc1.weight").rows();
    hc.in_dim = dino_tree.at("dino_head.fc1.weight").cols();
    hc.bottleneck = dino_tree.at("dino_head.fc2.weight").rows();
    hc.num_prototypes = dino_tree.at("dino_head.proto.weight").rows();
    state.dino_head = DinoHead{hc, std::move(dino_tree)};
  }
  if (!head_tree.empty()) {
    PredictionHead head;
    head.num_classes = head_tree.at("head.weight").rows();
    head.in_dim = head_tree.at("head.weight").cols();
    head.params = std::move(head_tree);
    state.head = std::move(head);
  }

  if (r.u8()) {  // teacher present
    TeacherState teacher;
    teacher.backbone = read_tree_like(r, state.backbone, "teacher backbone");
    teacher.injected = read_tree_like(r, state.injected, "teacher injected");
    if (!state.dino_head) {
      throw DataError("load_checkpoint: teacher present without a dino head");
    }
    teacher.head = read_tree_like(r, state.dino_head->params, "teacher head");
    std::vector<double> center = r.f64_vec();
    const std::size_t k = center.size();
    teacher.center = Tensor::from_data({k}, std::move(center));
    teacher.momentum = r.f64();
    teacher.center_momentum = r.f64();
    teacher.tau_student = r.f64();
    teacher.tau_teacher = r.f64();
    state.teacher = std::move(teacher);
  }

  if (r.u8()) {  // optimizer present
    AdamW::Snapshot snap;
    snap.config.base_lr = r.f64();
    snap.config.beta1 = r.f64();
    snap.config.beta2 = r.f64();
    snap.config.eps = r.f64();
    snap.config.weight_decay = r.f64();
    snap.config.warmup_epochs = static_cast<int>(r.u32());
    snap.config.total_epochs = static_cast<int>(r.u32());
    snap.step_count = static_cast<long>(r.u64());
    const std::uint32_t slots = r.u32();
    for (std::uint32_t i = 0; i < slots; ++i) {
      snap.names.push_back(r.str());
      snap.first_moments.push_back(r.f64_vec());
      snap.second_moments.push_back(r.f64_vec());
    }
    state.optimizer = std::move(snap);
  }

  const std::uint32_t rng_count = r.u32();
  for (std::uint32_t i = 0; i < rng_count; ++i) {
    const std::string name = r.str();
    state.rng_state[name] = r.u64();
  }

  if (r.u8()) {  // exact 64-bit values present: overwrite the f32 widening
    std::vector<ParamTree*> sections = {&state.backbone, &state.injected};
    if (state.dino_head) sections.push_back(&state.dino_head->params);
    if (state.head) sections.push_back(&state.head->params);
    for (ParamTree* tree : sections) {
      for (const auto& name : tree->names()) {
        for (double& v : tree->at(name).data()) v = r.f64();
      }
    }
  }
  if (!r.done()) {
    throw DataError("load_checkpoint: " +
                    std::to_string(bytes.size() - r.offset()) +
                    " trailing bytes in '" + path.string() + "'");
  }
  return state;
}

}  // namespace essa

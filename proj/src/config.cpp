#include "dhvc/config.hpp"

#include <algorithm>
#include <sstream>

#include "dhvc/errors.hpp"
#include "dhvc/io.hpp"
#include "dhvc/version.hpp"

namespace dhvc::cli {

nets::ModelConfig RunConfig::effective_model() const {
  if (!paper_scale) return model;
  nets::ModelConfig m = nets::ModelConfig::paper_scale();
  m.d_style = model.d_style;
  m.dilation_depth = model.dilation_depth;
  m.time_embed_dim = model.time_embed_dim;
  m.d_content = model.d_content;
  m.n_mels = model.n_mels;
  return m;
}

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

struct Setter {
  RunConfig* cfg;

  void apply(const std::string& section, const std::string& key, const std::string& value) {
    const std::string full = section + "." + key;
    try {
      if (!try_apply(section, key, value))
        throw ConfigError("unknown config key: " + full);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError("bad value for " + full + ": '" + value + "'");
    }
  }

  bool try_apply(const std::string& s, const std::string& k, const std::string& v) {
    RunConfig& c = *cfg;
    if (s == "dsp") {
      if (k == "d_content") return c.d_content = std::stoi(v), c.model.d_content = c.d_content, true;
      if (k == "f_min") return c.mel_f_min_hz = std::stod(v), true;
      if (k == "f_max") return c.mel_f_max_hz = std::stod(v), true;
      if (k == "griffin_lim_iterations") return c.griffin_lim_iterations = std::stoi(v), true;
      return false;
    }
    if (s == "pitch") {
      if (k == "f_min") return c.tracker.f_min_hz = std::stod(v), true;
      if (k == "f_max") return c.tracker.f_max_hz = std::stod(v), true;
      if (k == "nccf_window") return c.tracker.nccf_window = std::stoi(v), true;
      if (k == "top_k") return c.tracker.top_k = std::stoi(v), true;
      if (k == "nccf_threshold") return c.tracker.nccf_threshold = std::stod(v), true;
      if (k == "unvoiced_cost") return c.tracker.unvoiced_cost = std::stod(v), true;
      if (k == "lambda_octave") return c.tracker.lambda_octave = std::stod(v), true;
      if (k == "switch_cost") return c.tracker.switch_cost = std::stod(v), true;
      if (k == "lag_bias") return c.tracker.lag_bias = std::stod(v), true;
      if (k == "energy_rel_floor") return c.tracker.energy_rel_floor = std::stod(v), true;
      return false;
    }
    if (s == "diffusion") {
      if (k == "beta0") return c.sched.beta0 = std::stod(v), true;
      if (k == "beta1") return c.sched.beta1 = std::stod(v), true;
      if (k == "mask_ratio") return c.mask_ratio = std::stod(v), true;
      return false;
    }
    if (s == "nets") {
      if (k == "pitch_denoiser_channels")
        return c.model.pitch_denoiser_channels = std::stoi(v), true;
      if (k == "unet_channels") {
        std::istringstream ss(v);
        std::string cell;
        for (int i = 0; i < 3; ++i) {
          if (!std::getline(ss, cell, ',')) throw std::invalid_argument("need 3 values");
          c.model.unet_channels[static_cast<std::size_t>(i)] = std::stoi(cell);
        }
        return true;
      }
      if (k == "encoder_channels") return c.model.encoder_channels = std::stoi(v), true;
      if (k == "d_style") return c.model.d_style = std::stoi(v), true;
      if (k == "dilation_depth") return c.model.dilation_depth = std::stoi(v), true;
      if (k == "time_embed_dim") return c.model.time_embed_dim = std::stoi(v), true;
      if (k == "paper_scale") return c.paper_scale = (v == "true" || v == "1"), true;
      return false;
    }
    if (s == "train") {
      if (k == "steps") return c.steps = std::stoll(v), true;
      if (k == "batch") return c.batch = std::stoi(v), true;
      if (k == "seg_frames") return c.seg_frames = std::stoi(v), true;
      if (k == "val_per_speaker") return c.val_per_speaker = std::stoi(v), true;
      if (k == "lr") return c.adam.lr0 = std::stod(v), true;
      if (k == "weight_decay") return c.adam.weight_decay = std::stod(v), true;
      if (k == "seed") return c.seed = std::stoull(v), true;
      return false;
    }
    if (s == "sample") {
      if (k == "steps") return c.sample_steps = std::stoi(v), true;
      if (k == "temperature") return c.temperature = std::stod(v), true;
      if (k == "seed") return c.sample_seed = std::stoull(v), true;
      return false;
    }
    throw ConfigError("unknown config section: [" + s + "]");
  }
};

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  Setter setter{&cfg};
  std::istringstream ss(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw ConfigError("malformed section header at line " + std::to_string(line_no));
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("expected key=value at line " + std::to_string(line_no) + ": '" +
                        t + "'");
    if (section.empty())
      throw ConfigError("key outside any section at line " + std::to_string(line_no));
    setter.apply(section, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  return parse_config_text(io::read_text_file(path));
}

std::string RunConfig::dump() const {
  std::ostringstream os;
  auto put = [&os](const std::string& key, auto value) {
    os << key << "=" << value << "\n";
  };
  put("diffusion.beta0", sched.beta0);
  put("diffusion.beta1", sched.beta1);
  put("diffusion.mask_ratio", mask_ratio);
  put("dsp.d_content", d_content);
  put("dsp.f_max", mel_f_max_hz);
  put("dsp.f_min", mel_f_min_hz);
  put("dsp.griffin_lim_iterations", griffin_lim_iterations);
  const nets::ModelConfig m = effective_model();
  put("nets.d_style", m.d_style);
  put("nets.dilation_depth", m.dilation_depth);
  put("nets.encoder_channels", m.encoder_channels);
  put("nets.paper_scale", paper_scale ? 1 : 0);
  put("nets.pitch_denoiser_channels", m.pitch_denoiser_channels);
  put("nets.time_embed_dim", m.time_embed_dim);
  os << "nets.unet_channels=" << m.unet_channels[0] << "," << m.unet_channels[1] << ","
     << m.unet_channels[2] << "\n";
  put("pitch.energy_rel_floor", tracker.energy_rel_floor);
  put("pitch.f_max", tracker.f_max_hz);
  put("pitch.f_min", tracker.f_min_hz);
  put("pitch.lag_bias", tracker.lag_bias);
  put("pitch.lambda_octave", tracker.lambda_octave);
  put("pitch.nccf_threshold", tracker.nccf_threshold);
  put("pitch.nccf_window", tracker.nccf_window);
  put("pitch.switch_cost", tracker.switch_cost);
  put("pitch.top_k", tracker.top_k);
  put("pitch.unvoiced_cost", tracker.unvoiced_cost);
  put("sample.seed", sample_seed);
  put("sample.steps", sample_steps);
  put("sample.temperature", temperature);
  put("train.batch", batch);
  put("train.lr", adam.lr0);
  put("train.seed", seed);
  put("train.seg_frames", seg_frames);
  put("train.steps", steps);
  put("train.val_per_speaker", val_per_speaker);
  put("train.weight_decay", adam.weight_decay);
  return os.str();
}

void write_manifest(const std::filesystem::path& path, const RunConfig& cfg,
                    const std::string& command,
                    const std::vector<std::pair<std::string, std::string>>& inputs) {
  std::ostringstream os;
  os << "binary_version=" << kVersion << "\n";
  os << "command=" << command << "\n";
  const std::string dump = cfg.dump();
  os << "config_hash=" << std::hex << io::fnv1a64(dump) << std::dec << "\n";
  for (const auto& [k, v] : inputs) os << k << "=" << v << "\n";
  os << "--- config ---\n" << dump;
  io::write_text_file(path, os.str());
}

}  // namespace dhvc::cli

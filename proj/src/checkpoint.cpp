// SPDX-License-Identifier: Apache-2.0
#include "di2/checkpoint.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "di2/binio.hpp"
#include "di2/evalharness.hpp"

namespace di2 {

namespace {

constexpr const char* kMagic = "DI2CKPT v1";

const std::vector<std::pair<Stage, std::string>> kStageNames{
    {kWarmup, "warmup"}, {kAlign, "align"}, {kCodebook, "codebook"}, {kFinetune, "finetune"}};

std::string shape_text(const Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out;
}

std::size_t parse_size(const std::string& text, const std::string& what) {
    std::size_t v = 0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end || text.empty()) throw FormatError("checkpoint: bad " + what + ": " + text);
    return v;
}

Shape parse_shape(const std::string& text) {
    Shape s;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto x = text.find('x', start);
        const auto part = text.substr(start, x == std::string::npos ? std::string::npos : x - start);
        const auto v = parse_size(part, "shape");
        if (v == 0) throw FormatError("checkpoint: zero extent in shape " + text);
        s.push_back(v);
        if (x == std::string::npos) break;
        start = x + 1;
    }
    return s;
}

// Line cursor over the text portion of the file.
class Lines {
public:
    explicit Lines(const std::string& bytes) : bytes_(bytes) {}

    std::string next() {
        const auto nl = bytes_.find('\n', pos_);
        if (nl == std::string::npos) throw FormatError("checkpoint: truncated header");
        auto line = bytes_.substr(pos_, nl - pos_);
        pos_ = nl + 1;
        return line;
    }

    // Value after "<key> " on the next line.
    std::string field(const std::string& key) {
        const auto line = next();
        if (line.rfind(key + " ", 0) != 0) throw FormatError("checkpoint: expected '" + key + "', got '" + line + "'");
        return line.substr(key.size() + 1);
    }

    std::size_t position() const { return pos_; }
    void skip(std::size_t n) { pos_ += n; }

private:
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

struct Parsed {
    CheckpointInfo info;
    std::size_t payload_start = 0;
};

Parsed parse(const std::string& bytes) {
    Parsed p;
    Lines lines(bytes);
    if (lines.next() != kMagic) throw FormatError("checkpoint: missing DI2CKPT v1 header");
    p.info.stage = lines.field("stage");
    const auto completed = lines.field("completed");
    if (completed != "none") {
        std::stringstream ss(completed);
        for (std::string item; std::getline(ss, item, ',');) p.info.completed.push_back(item);
    }
    const auto n_config = parse_size(lines.field("config"), "config line count");
    for (std::size_t i = 0; i < n_config; ++i) p.info.config_text += lines.next() + "\n";
    const auto n_arrays = parse_size(lines.field("arrays"), "array count");
    std::size_t expected_offset = 0;
    for (std::size_t i = 0; i < n_arrays; ++i) {
        std::stringstream ss(lines.next());
        ManifestEntry e;
        std::string shape, offset, count;
        if (!(ss >> e.name >> shape >> offset >> count)) throw FormatError("checkpoint: malformed manifest line");
        e.shape = parse_shape(shape);
        e.offset = parse_size(offset, "offset");
        e.count = parse_size(count, "count");
        if (e.count != shape_numel(e.shape) || e.offset != expected_offset) {
            throw FormatError("checkpoint: inconsistent manifest entry for " + e.name);
        }
        expected_offset += 4 * e.count;
        p.info.manifest.push_back(std::move(e));
    }
    const auto payload = parse_size(lines.field("payload"), "payload size");
    if (payload != expected_offset) throw FormatError("checkpoint: payload size disagrees with manifest");
    p.payload_start = lines.position();
    if (p.payload_start + payload > bytes.size()) throw FormatError("checkpoint: truncated payload");
    lines.skip(payload);
    const auto body_end = lines.position();
    const auto sum = lines.field("checksum");
    if (lines.position() != bytes.size()) throw FormatError("checkpoint: trailing bytes after checksum");
    p.info.checksum = binio::fnv1a(std::span<const char>(bytes.data(), body_end));
    if (sum != hex64(p.info.checksum)) throw FormatError("checkpoint: checksum mismatch");
    return p;
}

}  // namespace

std::string encode_checkpoint(const Model& model) {
    std::string out = std::string(kMagic) + "\n";
    out += "stage " + model.stage_tag() + "\n";
    std::string completed;
    for (const auto& [s, name] : kStageNames)
        if (model.has(s)) completed += (completed.empty() ? "" : ",") + name;
    out += "completed " + (completed.empty() ? std::string("none") : completed) + "\n";
    const auto cfg = model.config.to_text();
    out += "config " + std::to_string(std::count(cfg.begin(), cfg.end(), '\n')) + "\n" + cfg;

    const auto arrays = model.named_arrays();
    out += "arrays " + std::to_string(arrays.size()) + "\n";
    std::size_t offset = 0;
    std::string payload;
    for (const auto& [name, t] : arrays) {
        out += name + " " + shape_text(t.shape()) + " " + std::to_string(offset) + " " + std::to_string(t.numel()) + "\n";
        binio::put_f32s(payload, t.data());
        offset += 4 * t.numel();
    }
    out += "payload " + std::to_string(payload.size()) + "\n" + payload;
    out += "checksum " + hex64(binio::fnv1a(out)) + "\n";
    return out;
}

CheckpointInfo inspect_checkpoint(const std::string& bytes) { return parse(bytes).info; }

Model decode_checkpoint(const std::string& bytes) {
    const auto p = parse(bytes);
    Model m = make_model(ExperimentConfig::from_text(p.info.config_text));
    for (const auto& name : p.info.completed) {
        bool known = false;
        for (const auto& [s, n] : kStageNames)
            if (n == name) {
                m.stages |= s;
                known = true;
            }
        if (!known) throw FormatError("checkpoint: unknown stage name " + name);
    }
    if (m.stage_tag() != p.info.stage) throw FormatError("checkpoint: stage tag disagrees with completed stages");

    const auto arrays = m.named_arrays();
    if (arrays.size() != p.info.manifest.size()) throw FormatError("checkpoint: array count does not match config");
    for (std::size_t i = 0; i < arrays.size(); ++i) {
        const auto& e = p.info.manifest[i];
        const auto& [name, t] = arrays[i];
        if (e.name != name || e.shape != t.shape()) {
            throw FormatError("checkpoint: array " + e.name + " " + shape_text(e.shape) + " does not match expected " +
                              name + " " + shape_text(t.shape()));
        }
        binio::Reader r(std::span<const char>(bytes.data() + p.payload_start + e.offset, 4 * e.count));
        if (name == "codebook.usage") {
            r.f32s(m.codebook.usage);
        } else {
            auto dst = t;  // shares storage with the model
            r.f32s(dst.data());
        }
    }
    return m;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
    write_file_atomic(path, encode_checkpoint(model));
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContractError("cannot open checkpoint: " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

Model clone_model(const Model& model) { return decode_checkpoint(encode_checkpoint(model)); }

}  // namespace di2

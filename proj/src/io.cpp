#include "sgstereo/io.hpp"

#include <bit>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <json.hpp>

namespace sgstereo::io {

ParseError::ParseError(const std::string& msg, std::size_t byte_offset)
    : std::runtime_error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
      offset_(byte_offset) {}

namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + path.string());
}

constexpr bool kHostLittle = std::endian::native == std::endian::little;

float byteswap_float(float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    u = ((u & 0xff000000u) >> 24) | ((u & 0x00ff0000u) >> 8) | ((u & 0x0000ff00u) << 8) |
        ((u & 0x000000ffu) << 24);
    std::memcpy(&f, &u, 4);
    return f;
}

/// Reads one whitespace-terminated token starting at `pos`; leaves `pos`
/// one past the terminating byte.
std::string next_token(const std::string& bytes, std::size_t& pos, const char* what) {
    const std::size_t start = pos;
    while (pos < bytes.size() && bytes[pos] != '\n' && bytes[pos] != ' ' && bytes[pos] != '\r' &&
           bytes[pos] != '\t')
        ++pos;
    if (pos == start || pos >= bytes.size())
        throw ParseError(std::string("pfm: missing ") + what, start);
    const std::string tok = bytes.substr(start, pos - start);
    ++pos;  // consume the separator
    return tok;
}

}  // namespace

void write_pfm(const DisparityMap& map, const std::filesystem::path& path) {
    if (map.height <= 0 || map.width <= 0 ||
        map.values.size() != static_cast<size_t>(map.height) * map.width)
        throw std::invalid_argument("write_pfm: inconsistent map dimensions");

    std::string out;
    out.reserve(32 + 4 * map.values.size());
    out += "Pf\n";
    out += std::to_string(map.width) + " " + std::to_string(map.height) + "\n";
    out += "-1.0\n";

    // bottom row first
    for (int y = map.height - 1; y >= 0; --y)
        for (int x = 0; x < map.width; ++x) {
            const size_t i = static_cast<size_t>(y) * map.width + x;
            const bool ok = map.valid.empty() ? true : map.valid[i] != 0;
            double v = ok ? map.values[i] : 0.0;
            if (!std::isfinite(v)) v = 0.0;
            float f = static_cast<float>(v);
            if (!kHostLittle) f = byteswap_float(f);
            char buf[4];
            std::memcpy(buf, &f, 4);
            out.append(buf, 4);
        }
    write_file(path, out);

    std::vector<std::uint8_t> valid = map.valid;
    if (valid.empty()) valid.assign(map.values.size(), 1);
    for (size_t i = 0; i < map.values.size(); ++i)
        if (!std::isfinite(map.values[i])) valid[i] = 0;
    write_pgm_mask(valid, map.height, map.width,
                   path.string() + ".mask.pgm");
}

DisparityMap read_pfm(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    std::size_t pos = 0;

    const std::string magic = next_token(bytes, pos, "magic");
    if (magic != "Pf")
        throw ParseError("pfm: expected magic \"Pf\", got \"" + magic + "\"", 0);

    const std::size_t dim_at = pos;
    int width = 0, height = 0;
    try {
        width = std::stoi(next_token(bytes, pos, "width"));
        height = std::stoi(next_token(bytes, pos, "height"));
    } catch (const std::logic_error&) {
        throw ParseError("pfm: bad dimensions", dim_at);
    }
    if (width <= 0 || height <= 0) throw ParseError("pfm: bad dimensions", dim_at);

    const std::size_t scale_at = pos;
    double scale = 0.0;
    try {
        scale = std::stod(next_token(bytes, pos, "scale"));
    } catch (const std::logic_error&) {
        throw ParseError("pfm: bad scale", scale_at);
    }
    if (scale == 0.0) throw ParseError("pfm: zero scale", scale_at);
    const bool file_little = scale < 0.0;

    const std::size_t need = static_cast<size_t>(width) * height * 4;
    if (bytes.size() - pos < need)
        throw ParseError("pfm: truncated payload, expected " + std::to_string(need) +
                             " bytes, found " + std::to_string(bytes.size() - pos),
                         bytes.size());

    DisparityMap map;
    map.height = height;
    map.width = width;
    map.values.resize(static_cast<size_t>(height) * width);
    for (int y = height - 1; y >= 0; --y)
        for (int x = 0; x < width; ++x) {
            float f;
            std::memcpy(&f, bytes.data() + pos, 4);
            pos += 4;
            if (file_little != kHostLittle) f = byteswap_float(f);
            map.values[static_cast<size_t>(y) * width + x] = static_cast<double>(f);
        }

    const std::filesystem::path mask_path = path.string() + ".mask.pgm";
    if (std::filesystem::exists(mask_path))
        map.valid = read_pgm_mask(mask_path, height, width);
    else
        map.valid.assign(map.values.size(), 1);
    return map;
}

void write_pgm_mask(const std::vector<std::uint8_t>& valid, int height, int width,
                    const std::filesystem::path& path) {
    if (valid.size() != static_cast<size_t>(height) * width)
        throw std::invalid_argument("write_pgm_mask: size mismatch");
    std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    for (auto v : valid) out.push_back(v ? static_cast<char>(255) : 0);
    write_file(path, out);
}

std::vector<std::uint8_t> read_pgm_mask(const std::filesystem::path& path, int height,
                                        int width) {
    const std::string bytes = read_file(path);
    std::size_t pos = 0;
    if (next_token(bytes, pos, "magic") != "P5") throw ParseError("pgm: expected P5", 0);
    const std::size_t dim_at = pos;
    int w = 0, h = 0, maxval = 0;
    try {
        w = std::stoi(next_token(bytes, pos, "width"));
        h = std::stoi(next_token(bytes, pos, "height"));
        maxval = std::stoi(next_token(bytes, pos, "maxval"));
    } catch (const std::logic_error&) {
        throw ParseError("pgm: bad header", dim_at);
    }
    if (w != width || h != height || maxval != 255)
        throw ParseError("pgm: unexpected header", dim_at);
    if (bytes.size() - pos < static_cast<size_t>(w) * h)
        throw ParseError("pgm: truncated payload", bytes.size());
    std::vector<std::uint8_t> valid(static_cast<size_t>(w) * h);
    for (size_t i = 0; i < valid.size(); ++i)
        valid[i] = static_cast<std::uint8_t>(bytes[pos + i]) >= 128 ? 1 : 0;
    return valid;
}

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

void write_csv(const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows,
               const std::filesystem::path& path) {
    std::string out;
    for (size_t i = 0; i < header.size(); ++i) {
        if (i) out.push_back(',');
        out += csv_escape(header[i]);
    }
    out.push_back('\n');
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) out.push_back(',');
            out += csv_escape(row[i]);
        }
        out.push_back('\n');
    }
    write_file(path, out);
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

namespace {

std::string format_double_exact(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    // trim to the shortest representation that round-trips
    for (int prec = 1; prec < 17; ++prec) {
        char t[40];
        std::snprintf(t, sizeof(t), "%.*g", prec, v);
        if (std::strtod(t, nullptr) == v) return t;
    }
    return buf;
}

struct Field {
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

template <typename T, typename Parse>
Field make_field(T TrainConfig::* member, Parse parse,
                 std::string (*print)(const T&)) {
    return Field{
        [member, parse](TrainConfig& c, const std::string& s) { c.*member = parse(s); },
        [member, print](const TrainConfig& c) { return print(c.*member); }};
}

double parse_double(const std::string& s) {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
}
int parse_int(const std::string& s) {
    size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
}
std::uint64_t parse_u64(const std::string& s) {
    size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
}

std::string print_double(const double& v) { return format_double_exact(v); }
std::string print_int(const int& v) { return std::to_string(v); }
std::string print_u64(const std::uint64_t& v) { return std::to_string(v); }
std::string print_loss(const LossMode& m) { return to_string(m); }
std::string print_up(const UpsampleMode& m) { return to_string(m); }
std::string print_scene(const SceneKind& k) { return to_string(k); }

const std::vector<std::pair<std::string, Field>>& config_fields() {
    static const std::vector<std::pair<std::string, Field>> fields = {
        {"sigma", make_field(&TrainConfig::sigma, parse_double, print_double)},
        {"lambda", make_field(&TrainConfig::lambda, parse_double, print_double)},
        {"d_max", make_field(&TrainConfig::d_max, parse_int, print_int)},
        {"d_ext", make_field(&TrainConfig::d_ext, parse_int, print_int)},
        {"stride", make_field(&TrainConfig::stride, parse_int, print_int)},
        {"loss_mode", make_field(&TrainConfig::loss_mode,
                                 [](const std::string& s) { return loss_mode_from_string(s); },
                                 print_loss)},
        {"upsample_mode",
         make_field(&TrainConfig::upsample_mode,
                    [](const std::string& s) { return upsample_mode_from_string(s); }, print_up)},
        {"lr", make_field(&TrainConfig::lr, parse_double, print_double)},
        {"lr_decay_epoch", make_field(&TrainConfig::lr_decay_epoch, parse_int, print_int)},
        {"lr_decay", make_field(&TrainConfig::lr_decay, parse_double, print_double)},
        {"epochs", make_field(&TrainConfig::epochs, parse_int, print_int)},
        {"seed", make_field(&TrainConfig::seed, parse_u64, print_u64)},
        {"batch_size", make_field(&TrainConfig::batch_size, parse_int, print_int)},
        {"beta1", make_field(&TrainConfig::beta1, parse_double, print_double)},
        {"beta2", make_field(&TrainConfig::beta2, parse_double, print_double)},
        {"weight_decay", make_field(&TrainConfig::weight_decay, parse_double, print_double)},
        {"loss_threshold", make_field(&TrainConfig::loss_threshold, parse_double, print_double)},
        {"height", make_field(&TrainConfig::height, parse_int, print_int)},
        {"width", make_field(&TrainConfig::width, parse_int, print_int)},
        {"train_samples", make_field(&TrainConfig::train_samples, parse_int, print_int)},
        {"eval_samples", make_field(&TrainConfig::eval_samples, parse_int, print_int)},
        {"train_scene", make_field(&TrainConfig::train_scene,
                                   [](const std::string& s) { return scene_from_string(s); },
                                   print_scene)},
        {"eval_scene", make_field(&TrainConfig::eval_scene,
                                  [](const std::string& s) { return scene_from_string(s); },
                                  print_scene)},
        {"texture_period", make_field(&TrainConfig::texture_period, parse_int, print_int)},
        {"eval_every", make_field(&TrainConfig::eval_every, parse_int, print_int)},
    };
    return fields;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

TrainConfig parse_config(const std::string& text) {
    TrainConfig cfg;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(lineno) +
                                     ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto& fields = config_fields();
        const auto it = std::find_if(fields.begin(), fields.end(),
                                     [&](const auto& f) { return f.first == key; });
        if (it == fields.end())
            throw std::runtime_error("config: unknown key \"" + key + "\"");
        if (!seen.insert(key).second)
            throw std::runtime_error("config: duplicate key \"" + key + "\" at line " +
                                     std::to_string(lineno));
        try {
            it->second.set(cfg, value);
        } catch (const std::logic_error&) {
            throw std::runtime_error("config line " + std::to_string(lineno) +
                                     ": bad value for \"" + key + "\": " + value);
        }
    }
    std::vector<std::string> missing;
    for (const auto& [key, field] : config_fields())
        if (!seen.count(key)) missing.push_back(key);
    if (!missing.empty()) {
        std::string msg = "config: missing required key(s):";
        for (const auto& k : missing) msg += " " + k;
        throw std::runtime_error(msg);
    }
    return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
    return parse_config(read_file(path));
}

std::string serialize_config(const TrainConfig& cfg) {
    std::string out;
    for (const auto& [key, field] : config_fields())
        out += key + " = " + field.get(cfg) + "\n";
    return out;
}

void save_config(const TrainConfig& cfg, const std::filesystem::path& path) {
    write_file(path, serialize_config(cfg));
}

namespace {

void append_raw(std::string& out, const void* data, size_t n) {
    out.append(static_cast<const char*>(data), n);
}

template <typename T>
T read_raw(const std::string& bytes, size_t& pos) {
    if (pos + sizeof(T) > bytes.size())
        throw ParseError("weights: truncated file", pos);
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

}  // namespace

void write_weights(const RefinerModel& model, const std::filesystem::path& path) {
    std::string out = "SGWT";
    const std::uint32_t version = 1;
    const std::int32_t bins = model.bins, hidden = model.hidden;
    append_raw(out, &version, 4);
    append_raw(out, &bins, 4);
    append_raw(out, &hidden, 4);
    for (const ad::Parameter* p : {&model.w1, &model.b1, &model.w2, &model.b2, &model.tau}) {
        const std::uint64_t n = p->value.size();
        append_raw(out, &n, 8);
        append_raw(out, p->value.data(), 8 * p->value.size());
    }
    write_file(path, out);
}

RefinerModel read_weights(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    size_t pos = 0;
    if (bytes.size() < 4 || bytes.substr(0, 4) != "SGWT")
        throw ParseError("weights: bad magic", 0);
    pos = 4;
    const auto version = read_raw<std::uint32_t>(bytes, pos);
    if (version != 1) throw ParseError("weights: unsupported version", 4);
    const auto bins = read_raw<std::int32_t>(bytes, pos);
    const auto hidden = read_raw<std::int32_t>(bytes, pos);
    RefinerModel model(bins, hidden, 0);
    for (ad::Parameter* p : model.parameters()) {
        const auto n = read_raw<std::uint64_t>(bytes, pos);
        if (n != p->value.size()) throw ParseError("weights: unexpected tensor size", pos - 8);
        for (size_t i = 0; i < n; ++i) p->value[i] = read_raw<double>(bytes, pos);
    }
    if (pos != bytes.size()) throw ParseError("weights: trailing bytes", pos);
    return model;
}

namespace {

/// Minimal SHA-1 (FIPS 180-1), enough for git-style blob hashes.
struct Sha1 {
    std::uint32_t h[5] = {0x67452301u, 0xEFCDAB89u, 0x98BADCFEu, 0x10325476u, 0xC3D2E1F0u};
    std::uint64_t total = 0;
    unsigned char block[64];
    size_t fill = 0;

    static std::uint32_t rol(std::uint32_t v, int s) { return (v << s) | (v >> (32 - s)); }

    void process(const unsigned char* p) {
        std::uint32_t w[80];
        for (int i = 0; i < 16; ++i)
            w[i] = (std::uint32_t(p[4 * i]) << 24) | (std::uint32_t(p[4 * i + 1]) << 16) |
                   (std::uint32_t(p[4 * i + 2]) << 8) | std::uint32_t(p[4 * i + 3]);
        for (int i = 16; i < 80; ++i) w[i] = rol(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);
        std::uint32_t a = h[0], b = h[1], c = h[2], d = h[3], e = h[4];
        for (int i = 0; i < 80; ++i) {
            std::uint32_t f, k;
            if (i < 20) { f = (b & c) | (~b & d); k = 0x5A827999u; }
            else if (i < 40) { f = b ^ c ^ d; k = 0x6ED9EBA1u; }
            else if (i < 60) { f = (b & c) | (b & d) | (c & d); k = 0x8F1BBCDCu; }
            else { f = b ^ c ^ d; k = 0xCA62C1D6u; }
            const std::uint32_t t = rol(a, 5) + f + e + k + w[i];
            e = d; d = c; c = rol(b, 30); b = a; a = t;
        }
        h[0] += a; h[1] += b; h[2] += c; h[3] += d; h[4] += e;
    }

    void update(const void* data, size_t n) {
        const unsigned char* p = static_cast<const unsigned char*>(data);
        total += n;
        while (n > 0) {
            const size_t take = std::min(n, static_cast<size_t>(64 - fill));
            std::memcpy(block + fill, p, take);
            fill += take;
            p += take;
            n -= take;
            if (fill == 64) {
                process(block);
                fill = 0;
            }
        }
    }

    std::string hex_digest() {
        const std::uint64_t bits = total * 8;
        const unsigned char pad = 0x80;
        update(&pad, 1);
        const unsigned char zero = 0;
        while (fill != 56) update(&zero, 1);
        unsigned char len[8];
        for (int i = 0; i < 8; ++i) len[i] = static_cast<unsigned char>(bits >> (56 - 8 * i));
        update(len, 8);
        char out[41];
        for (int i = 0; i < 5; ++i)
            std::snprintf(out + 8 * i, 9, "%08" PRIx32, h[i]);
        return std::string(out, 40);
    }
};

}  // namespace

std::string git_blob_sha1(const std::string& bytes) {
    Sha1 s;
    const std::string header = "blob " + std::to_string(bytes.size());
    s.update(header.data(), header.size());
    const char zero = 0;
    s.update(&zero, 1);
    s.update(bytes.data(), bytes.size());
    return s.hex_digest();
}

std::string git_blob_sha1_file(const std::filesystem::path& path) {
    return git_blob_sha1(read_file(path));
}

std::string serialize_manifest(const RunManifest& m) {
    nlohmann::json j;
    j["command"] = m.command;
    j["seed"] = m.seed;
    nlohmann::json cfg;
    for (const auto& [key, field] : config_fields()) cfg[key] = field.get(m.config);
    j["config"] = cfg;
    nlohmann::json outs = nlohmann::json::array();
    for (const auto& [path, hash] : m.outputs) outs.push_back({{"path", path}, {"sha1", hash}});
    j["outputs"] = outs;
    j["metrics"] = m.metrics;
    return j.dump(2) + "\n";
}

RunManifest parse_manifest(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    std::string cfg_text;
    for (const auto& [key, value] : j.at("config").items())
        cfg_text += key + " = " + value.get<std::string>() + "\n";
    m.config = parse_config(cfg_text);
    for (const auto& o : j.at("outputs"))
        m.outputs.emplace_back(o.at("path").get<std::string>(), o.at("sha1").get<std::string>());
    m.metrics = j.at("metrics").get<std::map<std::string, double>>();
    return m;
}

void write_manifest(const RunManifest& m, const std::filesystem::path& path) {
    write_file(path, serialize_manifest(m));
}

RunManifest read_manifest(const std::filesystem::path& path) {
    return parse_manifest(read_file(path));
}

}  // namespace sgstereo::io

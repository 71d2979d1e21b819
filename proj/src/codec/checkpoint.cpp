#include <bit>
#include <cstring>
#include <fstream>

#include "pfedgpa/checkpoint.hpp"

namespace pfedgpa {

namespace {

class Writer {
public:
    void u8(std::uint8_t v) { out.push_back(v); }
    void u32(std::uint32_t v) { le(v, 4); }
    void u64(std::uint64_t v) { le(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        out.insert(out.end(), s.begin(), s.end());
    }
    void raw(const std::vector<std::uint8_t>& b) { out.insert(out.end(), b.begin(), b.end()); }

    std::vector<std::uint8_t> out;

private:
    void le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
};

class Reader {
public:
    Reader(const std::uint8_t* p, std::size_t n, std::string what) : p_(p), n_(n), what_(std::move(what)) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    std::uint64_t u64() { return le(8); }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        const std::uint32_t len = u32();
        need(len);
        std::string s(reinterpret_cast<const char*>(p_ + pos_), len);
        pos_ += len;
        return s;
    }
    std::vector<std::uint8_t> bytes(std::uint64_t len) {
        need(len);
        std::vector<std::uint8_t> b(p_ + pos_, p_ + pos_ + len);
        pos_ += len;
        return b;
    }
    /// Guards counts read from the file before allocating.
    std::uint64_t count(std::uint64_t per_item) {
        const std::uint64_t c = u64();
        if (per_item != 0 && c > (n_ - pos_) / per_item) fail();
        return c;
    }
    bool done() const { return pos_ == n_; }
    void finish() {
        if (!done()) throw FormatError(what_ + ": " + std::to_string(n_ - pos_) + " trailing bytes");
    }

private:
    void need(std::uint64_t k) {
        if (k > n_ - pos_) fail();
    }
    [[noreturn]] void fail() const { throw FormatError(what_ + ": truncated at byte " + std::to_string(pos_)); }
    std::uint64_t le(int k) {
        need(static_cast<std::uint64_t>(k));
        std::uint64_t v = 0;
        for (int i = 0; i < k; ++i) v |= static_cast<std::uint64_t>(p_[pos_ + i]) << (8 * i);
        pos_ += static_cast<std::size_t>(k);
        return v;
    }

    const std::uint8_t* p_;
    std::size_t n_;
    std::size_t pos_ = 0;
    std::string what_;
};

constexpr char kMagic[4] = {'P', 'G', 'P', 'A'};

}  // namespace

void Checkpoint::put(std::string tag, std::string name, std::vector<std::uint8_t> payload) {
    for (auto& s : sections_) {
        if (s.tag == tag && s.name == name) {
            s.payload = std::move(payload);
            return;
        }
    }
    sections_.push_back({std::move(tag), std::move(name), std::move(payload)});
}

const Checkpoint::Section& Checkpoint::get(const std::string& tag, const std::string& name) const {
    for (const auto& s : sections_) {
        if (s.tag == tag && s.name == name) return s;
    }
    throw FormatError("checkpoint has no " + tag + " section named '" + name + "'");
}

bool Checkpoint::has(const std::string& tag, const std::string& name) const {
    for (const auto& s : sections_) {
        if (s.tag == tag && s.name == name) return true;
    }
    return false;
}

void Checkpoint::put_layout(const std::string& name, const Layout& layout) {
    Writer w;
    w.u32(static_cast<std::uint32_t>(layout.size()));
    for (const auto& e : layout.entries()) {
        w.str(e.name);
        w.u32(static_cast<std::uint32_t>(e.shape.size()));
        for (auto d : e.shape) w.u64(d);
    }
    put("LAYT", name, std::move(w.out));
}

Layout Checkpoint::layout(const std::string& name) const {
    const auto& s = get("LAYT", name);
    Reader r(s.payload.data(), s.payload.size(), "LAYT " + name);
    Layout layout;
    const std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        auto lname = r.str();
        Shape shape(r.u32());
        for (auto& d : shape) d = r.u64();
        layout.append(std::move(lname), std::move(shape));
    }
    r.finish();
    return layout;
}

void Checkpoint::put_values(const std::string& name, const std::vector<float>& v) {
    Writer w;
    w.u8(4);
    w.u64(v.size());
    for (float x : v) w.f32(x);
    put("VALS", name, std::move(w.out));
}

void Checkpoint::put_values(const std::string& name, const std::vector<double>& v) {
    Writer w;
    w.u8(8);
    w.u64(v.size());
    for (double x : v) w.f64(x);
    put("VALS", name, std::move(w.out));
}

StoredValues Checkpoint::values(const std::string& name) const {
    const auto& s = get("VALS", name);
    Reader r(s.payload.data(), s.payload.size(), "VALS " + name);
    StoredValues out;
    out.width = r.u8();
    if (out.width != 4 && out.width != 8) throw FormatError("VALS " + name + ": unsupported value width");
    const auto n = r.count(out.width);
    out.values.resize(n);
    for (auto& v : out.values) v = out.width == 4 ? static_cast<double>(r.f32()) : r.f64();
    r.finish();
    return out;
}

void Checkpoint::put_mask(const std::string& name, const LayerMask& mask) {
    Writer w;
    w.u32(static_cast<std::uint32_t>(mask.generated().size()));
    for (const auto& n : mask.generated()) w.str(n);
    put("MASK", name, std::move(w.out));
}

std::vector<std::string> Checkpoint::mask_names(const std::string& name) const {
    const auto& s = get("MASK", name);
    Reader r(s.payload.data(), s.payload.size(), "MASK " + name);
    std::vector<std::string> names(r.u32());
    for (auto& n : names) n = r.str();
    r.finish();
    return names;
}

LayerMask Checkpoint::mask(const std::string& name, const Layout& layout) const {
    return LayerMask(layout, mask_names(name));
}

void Checkpoint::put_norm(const std::string& name, const NormStats& norm) {
    Writer w;
    w.u64(norm.dim());
    w.f64(norm.floor);
    for (double v : norm.mean) w.f64(v);
    for (double v : norm.std) w.f64(v);
    put("NORM", name, std::move(w.out));
}

NormStats Checkpoint::norm(const std::string& name) const {
    const auto& s = get("NORM", name);
    Reader r(s.payload.data(), s.payload.size(), "NORM " + name);
    NormStats n;
    const auto d = r.count(16);
    n.floor = r.f64();
    n.mean.resize(d);
    n.std.resize(d);
    for (auto& v : n.mean) v = r.f64();
    for (auto& v : n.std) v = r.f64();
    r.finish();
    return n;
}

void Checkpoint::put_schedule(const std::string& name, const NoiseSchedule& s) {
    Writer w;
    w.u8(static_cast<std::uint8_t>(s.kind));
    w.u64(s.T);
    w.f64(s.beta_start);
    w.f64(s.beta_end);
    for (std::size_t t = 1; t <= s.T; ++t) w.f64(s.beta(t));
    put("SCHD", name, std::move(w.out));
}

NoiseSchedule Checkpoint::schedule(const std::string& name) const {
    const auto& sec = get("SCHD", name);
    Reader r(sec.payload.data(), sec.payload.size(), "SCHD " + name);
    const auto kind = r.u8();
    if (kind > static_cast<std::uint8_t>(ScheduleKind::Custom)) throw FormatError("SCHD " + name + ": unknown kind");
    const auto T = r.u64();
    const double bs = r.f64();
    const double be = r.f64();
    if (T > (sec.payload.size() / 8)) throw FormatError("SCHD " + name + ": truncated");
    std::vector<double> betas(T);
    for (auto& b : betas) b = r.f64();
    r.finish();
    NoiseSchedule s;
    try {
        s = make_schedule(betas);
    } catch (const ConfigError& e) {
        throw FormatError("SCHD " + name + ": " + e.what());
    }
    s.kind = static_cast<ScheduleKind>(kind);
    s.beta_start = bs;
    s.beta_end = be;
    return s;
}

void Checkpoint::put_latent(const std::string& name, const LatentCode& code) {
    Writer w;
    w.u64(code.dim());
    w.u64(code.steps());
    w.u64(code.schedule_hash);
    for (double v : code.theta_T) w.f64(v);
    for (const auto& e : code.eps) {
        for (double v : e) w.f64(v);
    }
    put("LATN", name, std::move(w.out));
}

LatentCode Checkpoint::latent(const std::string& name) const {
    const auto& s = get("LATN", name);
    Reader r(s.payload.data(), s.payload.size(), "LATN " + name);
    LatentCode code;
    const auto d = r.count(8);
    const auto T = r.u64();
    if (d != 0 && T > s.payload.size() / (8 * d)) throw FormatError("LATN " + name + ": truncated");
    code.schedule_hash = r.u64();
    code.theta_T.resize(d);
    for (auto& v : code.theta_T) v = r.f64();
    code.eps.assign(T, std::vector<double>(d));
    for (auto& e : code.eps) {
        for (auto& v : e) v = r.f64();
    }
    r.finish();
    return code;
}

void Checkpoint::put_meta(const std::string& key, const std::string& value) {
    meta_[key] = value;
}

std::string Checkpoint::meta(const std::string& key) const {
    auto it = meta_.find(key);
    if (it == meta_.end()) throw FormatError("checkpoint metadata has no key '" + key + "'");
    return it->second;
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
    std::vector<Section> all = sections_;
    if (!meta_.empty()) {
        Writer w;
        w.u32(static_cast<std::uint32_t>(meta_.size()));
        for (const auto& [k, v] : meta_) {
            w.str(k);
            w.str(v);
        }
        all.push_back({"META", "", std::move(w.out)});
    }
    Writer w;
    for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(all.size()));
    for (const auto& s : all) {
        for (char c : s.tag) w.u8(static_cast<std::uint8_t>(c));
        w.str(s.name);
        w.u64(s.payload.size());
        w.raw(s.payload);
    }
    return w.out;
}

Checkpoint Checkpoint::deserialize(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes.data(), bytes.size(), "checkpoint");
    for (char c : kMagic) {
        if (r.u8() != static_cast<std::uint8_t>(c)) throw FormatError("not a checkpoint container (bad magic)");
    }
    const auto version = r.u32();
    if (version == 0 || version > kCheckpointVersion) {
        throw FormatError("checkpoint format version " + std::to_string(version) + " is not supported (this build reads up to " +
                          std::to_string(kCheckpointVersion) + ")");
    }
    Checkpoint cp;
    const auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        std::string tag(4, ' ');
        for (auto& c : tag) c = static_cast<char>(r.u8());
        auto name = r.str();
        const auto len = r.u64();
        auto payload = r.bytes(len);
        if (tag == "META") {
            Reader m(payload.data(), payload.size(), "META");
            const auto k = m.u32();
            for (std::uint32_t j = 0; j < k; ++j) {
                auto key = m.str();
                cp.meta_[key] = m.str();
            }
            m.finish();
        } else {
            cp.sections_.push_back({std::move(tag), std::move(name), std::move(payload)});
        }
    }
    r.finish();
    return cp;
}

void Checkpoint::save(const std::filesystem::path& path) const {
    auto bytes = serialize();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

}  // namespace pfedgpa

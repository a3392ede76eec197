#include "fw/io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace fw {

void save_pgm(const std::string& path, const Tensor& image, double lo, double hi) {
    if (image.shape().size() != 2)
        throw std::invalid_argument("save_pgm: image shape " + shape_str(image.shape()) +
                                    " is not 2-D");
    if (!(hi > lo)) throw std::invalid_argument("save_pgm: empty value range");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_pgm: cannot open " + path + " for writing");

    const int h = image.shape()[0];
    const int w = image.shape()[1];
    out << "P2\n# range " << lo << " " << hi << "\n" << w << " " << h << "\n255\n";
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double unit = (double(image.data()[r * w + c]) - lo) / (hi - lo);
            unit = std::min(1.0, std::max(0.0, unit));
            out << int(std::lround(unit * 255.0)) << (c + 1 == w ? '\n' : ' ');
        }
    }
    if (!out) throw std::runtime_error("save_pgm: write to " + path + " failed");
}

Tensor load_pgm(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_pgm: cannot open " + path);

    std::string magic;
    in >> magic;
    if (magic != "P2")
        throw std::runtime_error("load_pgm: " + path + " starts with \"" + magic +
                                 "\", expected \"P2\"");

    double lo = 0.0, hi = 1.0;
    auto skip_comments = [&]() {
        in >> std::ws;
        while (in.peek() == '#') {
            std::string line;
            std::getline(in, line);
            std::istringstream ls(line);
            std::string hash, tag;
            ls >> hash >> tag;
            if (tag == "range") {
                double a, b;
                if (ls >> a >> b && b > a) {
                    lo = a;
                    hi = b;
                }
            }
            in >> std::ws;
        }
    };

    skip_comments();
    int w = 0, h = 0, maxval = 0;
    in >> w;
    skip_comments();
    in >> h;
    skip_comments();
    in >> maxval;
    if (!in || w < 1 || h < 1 || maxval < 1)
        throw std::runtime_error("load_pgm: " + path + " has a malformed header");

    std::vector<float> values(std::size_t(w) * h);
    for (std::size_t i = 0; i < values.size(); ++i) {
        long v = 0;
        if (!(in >> v))
            throw std::runtime_error("load_pgm: " + path + " ends after " + std::to_string(i) +
                                     " of " + std::to_string(values.size()) + " pixels");
        values[i] = float(lo + (hi - lo) * (double(v) / maxval));
    }
    return Tensor::from({h, w}, std::move(values));
}

}  // namespace fw

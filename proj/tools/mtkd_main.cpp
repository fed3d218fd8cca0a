#include "mtkd/commands.hpp"

#include <iostream>

int main(int argc, char** argv) {
    try {
        return mtkd::commands::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
}

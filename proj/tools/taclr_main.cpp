#include "taclr/cli.hpp"

int main(int argc, char** argv) { return taclr::dispatch(std::vector<std::string>(argv, argv + argc)); }

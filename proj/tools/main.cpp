#include "subsetar/run_config.hpp"

int main(int argc, char** argv) { return subsetar::run_cli(argc, argv); }

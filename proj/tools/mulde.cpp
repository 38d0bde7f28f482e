#include "mulde/cli.hpp"

int main(int argc, char** argv) { return mulde::cli::run(argc, argv); }

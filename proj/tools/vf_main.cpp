#include <iostream>

int main() {
  std::cout << "vf: placeholder\n";
  return 0;
}

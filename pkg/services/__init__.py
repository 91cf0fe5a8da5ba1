# Пакет для сервисов (оценки сложности, прототипичность, K-NN граф, жадный отбор)
